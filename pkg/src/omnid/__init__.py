"""Multi-view bird's-eye-view fusion policy learning, desk scale.

Subpackages:
    tensorgrad  - dense tensors with reverse-mode autodiff, optimizer, RNG
    geometry    - pinhole cameras, BEV voxel grid, projection tables
    ofg         - deformable-attention feature fusion into the BEV volume
    diffusion   - noise schedule, denoiser, DDPM sampler, the acting policy
    episodes    - demonstration container format, windowing, batching
    synthworld  - analytic multi-view tabletop environment and expert
    harness     - configs, training/eval loops, baseline, gradcheck, CLI
"""

__version__ = "0.1.0"
