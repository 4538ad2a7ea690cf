"""ldmshield: adversarial attacks on a desk-scale latent diffusion model,
surrogate smoothness profiling, and a numerically checkable transferability
lower bound."""

__version__ = "0.1.0"
