"""Central finite-difference gradient checking for float64 tensors."""

import torch


def numeric_grad(fn, x: torch.Tensor, step: float) -> torch.Tensor:
    g = torch.zeros_like(x)
    flat, gflat = x.data.view(-1), g.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + step
        up = fn().item()
        flat[i] = orig - step
        down = fn().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return g


def relative_error(fn, inputs, step: float = 1e-6) -> float:
    """Largest ``|analytic - numeric| / max|numeric|`` over the given leaf tensors."""
    for x in inputs:
        x.grad = None
    fn().backward()
    worst = 0.0
    for x in inputs:
        analytic = x.grad.detach().clone()
        num = numeric_grad(fn, x, step)
        scale = max(num.abs().max().item(), analytic.abs().max().item(), 1e-12)
        worst = max(worst, (analytic - num).abs().max().item() / scale)
    return worst
