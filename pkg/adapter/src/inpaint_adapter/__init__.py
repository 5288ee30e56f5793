"""File-protocol adapter for 2D image inpainting backends.

The package ships one console command, ``inpaint-adapter``, which reads
an RGB PNG and a grayscale hole mask (255 = hole), fills the hole, and
writes the result.  Three modes are available: a model-free diffusion
stub, a pass-through identity mode, and a TorchScript model wrapper.
"""

from inpaint_adapter.fill import diffusion_fill

__all__ = ["diffusion_fill"]
