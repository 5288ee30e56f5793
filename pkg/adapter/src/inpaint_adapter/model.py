"""TorchScript model wrapper for the ``model`` mode."""

import numpy as np


class ModelUnavailableError(RuntimeError):
    """The requested model could not be loaded or executed."""


def run_model(image: np.ndarray, mask: np.ndarray, model_path: str,
              device: str = "cpu") -> np.ndarray:
    """Inpaint through a TorchScript module.

    The module is called as ``module(image, mask)`` with a (1, 3, H, W)
    float image in [0, 1] and a (1, 1, H, W) float mask (1 = hole), and
    must return a (1, 3, H, W) float image.  Only masked pixels are taken
    from the model output; the rest pass through from the input.

    Raises
    ------
    ModelUnavailableError
        Torch missing, the file unreadable, or inference failed.
    """
    try:
        import torch
    except ImportError as exc:
        raise ModelUnavailableError(
            f"torch is not installed ({exc}); install the [model] extra"
        ) from None

    try:
        module = torch.jit.load(model_path, map_location=device)
        module.eval()
    except (OSError, RuntimeError, ValueError) as exc:
        raise ModelUnavailableError(
            f"cannot load model {model_path!r}: {exc}"
        ) from None

    img_t = torch.from_numpy(
        image.astype(np.float32) / 255.0
    ).permute(2, 0, 1).unsqueeze(0).to(device)
    mask_t = torch.from_numpy(
        mask.astype(np.float32)
    ).unsqueeze(0).unsqueeze(0).to(device)

    try:
        with torch.no_grad():
            result = module(img_t, mask_t)
    except RuntimeError as exc:
        raise ModelUnavailableError(f"model inference failed: {exc}") from None

    result = result.detach().cpu().numpy()
    if result.shape != (1, 3) + mask.shape:
        raise ModelUnavailableError(
            f"model returned shape {result.shape}, expected (1, 3, H, W)"
        )
    filled = np.clip(np.rint(result[0].transpose(1, 2, 0) * 255.0), 0, 255)
    out = image.copy()
    out[mask] = filled.astype(np.uint8)[mask]
    return out
