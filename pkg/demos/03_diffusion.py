"""Noise schedules and deterministic DDIM sampling, with no training.

An oracle noise predictor that knows the clean target shows that the DDIM
update recovers it exactly for any sub-schedule length.  A learned denoiser
would approximate that oracle.
"""
import numpy as np
import torch

from casft.diffusion import ddim_sample, ddim_timesteps, forward_diffuse, make_schedule

schedule = make_schedule(1000)
print("alpha_bar at k = 1, 250, 500, 750, 1000:",
      np.round(schedule.alpha_bar[[1, 250, 500, 750, 1000]], 5))

target = torch.tensor([[1.5, -0.5, 0.25, 2.0]], dtype=torch.float64)
g = torch.Generator().manual_seed(0)
for k in (10, 200, 1000):
    noisy = forward_diffuse(target, torch.tensor([k]), torch.randn(target.shape, generator=g, dtype=torch.float64),
                            schedule)
    print(f"k={k:4d}  noisy sample {np.round(noisy.numpy()[0], 3)}")


class Oracle(torch.nn.Module):
    def forward(self, y_k, k, c):
        a = torch.as_tensor(schedule.alpha_bar, dtype=y_k.dtype)[k][:, None]
        return (y_k - a.sqrt() * target) / (1 - a).sqrt()


for steps in (1, 5, 50):
    out = ddim_sample(Oracle(), torch.zeros(1, 1, dtype=torch.float64), schedule, steps, seed=1, l=4)
    print(f"{steps:2d} DDIM steps over {ddim_timesteps(1000, steps)[:3]}...: "
          f"max error {float((out - target).abs().max()):.1e}")
