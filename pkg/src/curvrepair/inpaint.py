"""Fill the masked region of a curvature raster.

Two interchangeable backends: a deterministic built-in diffusion fill
(masked pixels solve the discrete Laplace equation with the unmasked
pixels as boundary data), and an external command protocol that hands
the image/mask pair to any program speaking PNG in, PNG out.
"""

from __future__ import annotations

import logging
import os
import shlex
import shutil
import subprocess
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .images import load_rgb, save_png

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 540.0

_NEIGHBOR_OFFSETS = ((1, 0), (-1, 0), (0, 1), (0, -1))


class BackendError(RuntimeError):
    """An external inpainting command failed.

    Carries the captured standard error of the process (when any) in
    the ``stderr`` attribute so callers can surface diagnostics.
    """

    def __init__(self, message: str, stderr: str = ""):
        if stderr.strip():
            message = f"{message}\n--- backend stderr ---\n{stderr.strip()}"
        super().__init__(message)
        self.stderr = stderr


class BackendTimeoutError(BackendError):
    pass


def _check_pair(image: np.ndarray, mask: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"image must be (H, W, 3), got {image.shape}")
    if image.dtype != np.uint8:
        raise ValueError(f"image must be uint8, got {image.dtype}")
    if mask.shape != image.shape[:2]:
        raise ValueError(
            f"mask shape {mask.shape} does not match image {image.shape[:2]}"
        )


def _solve_masked(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Harmonic values on the masked pixels, one column per channel.

    Builds the 5-point Laplace system over the masked pixels with
    Dirichlet data taken from unmasked in-image neighbors.  Neighbors
    beyond the image border are simply absent (the diagonal counts only
    in-image neighbors), which keeps constants exact even when a mask
    touches the border.  Returns float64 of shape (n_masked, channels).
    """
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    n = ys.size
    index = np.full((h, w), -1, dtype=np.int64)
    index[ys, xs] = np.arange(n)

    values = image.reshape(h, w, -1).astype(np.float64)
    channels = values.shape[2]

    rows = [np.arange(n)]
    cols = [np.arange(n)]
    data = [np.zeros(n)]  # diagonal, accumulated below
    diag = np.zeros(n)
    rhs = np.zeros((n, channels))

    for dy, dx in _NEIGHBOR_OFFSETS:
        ny = ys + dy
        nx = xs + dx
        inside = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        src = np.nonzero(inside)[0]
        ny = ny[inside]
        nx = nx[inside]
        diag[src] += 1.0
        j = index[ny, nx]
        hit = j >= 0
        rows.append(src[hit])
        cols.append(j[hit])
        data.append(np.full(hit.sum(), -1.0))
        boundary = ~hit
        np.add.at(rhs, src[boundary], values[ny[boundary], nx[boundary]])

    data[0] = diag
    matrix = scipy.sparse.csc_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    solved = scipy.sparse.linalg.splu(matrix).solve(rhs)
    if not np.isfinite(solved).all():
        raise RuntimeError("inpainting system produced non-finite values")

    # enforce the discrete maximum principle exactly: the true solution
    # lies within the range of the boundary data, so clamping only
    # removes round-off from the factorization
    boundary_values = _dirichlet_values(values, mask)
    lo = boundary_values.min(axis=0)
    hi = boundary_values.max(axis=0)
    return np.clip(solved, lo, hi)


def _dirichlet_values(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Unmasked pixel values 4-adjacent to the mask, shape (k, channels)."""
    h, w = mask.shape
    ring = np.zeros_like(mask)
    ring[1:, :] |= mask[:-1, :]
    ring[:-1, :] |= mask[1:, :]
    ring[:, 1:] |= mask[:, :-1]
    ring[:, :-1] |= mask[:, 1:]
    ring &= ~mask
    return values[ring]


def inpaint_builtin(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Diffusion-fill the masked pixels of an RGB image.

    Each channel of the masked region is replaced by the solution of
    the discrete Laplace equation (5-point stencil) with the unmasked
    pixels as fixed boundary data: the smoothest possible fill, and a
    deterministic one.  Unmasked pixels are returned bit-identical.

    Parameters
    ----------
    image : (H, W, 3) uint8
    mask : (H, W) bool
        True where pixels must be synthesized.

    Returns
    -------
    (H, W, 3) uint8

    Raises
    ------
    ValueError
        If shapes/dtypes disagree, or every pixel is masked (no
        boundary data exists anywhere).
    """
    _check_pair(image, mask)
    mask = mask.astype(bool)
    if not mask.any():
        return image.copy()
    if mask.all():
        raise ValueError("mask covers the whole image: no boundary data to diffuse")

    filled = _solve_masked(image, mask)
    out = image.copy()
    out[mask] = np.clip(np.rint(filled), 0, 255).astype(np.uint8)
    return out


# ----------------------------------------------------------------------
# external backend protocol


@dataclass
class InpaintRequest:
    """One inpainting job.

    ``command`` of None selects the built-in diffusion fill; otherwise
    it is a template for an external program (see ``run_inpaint``).
    """

    image: np.ndarray
    mask: np.ndarray
    command: Optional[str] = None
    timeout: float = DEFAULT_TIMEOUT

    def validate(self) -> None:
        _check_pair(self.image, self.mask)
        if not self.timeout > 0:
            raise ValueError(f"timeout must be positive, got {self.timeout}")


@dataclass
class InpaintResult:
    image: np.ndarray
    backend_id: str
    elapsed: float


def _format_command(template: str, image: Path, mask: Path, output: Path) -> str:
    """Substitute the three file paths into a backend command template.

    Templates may reference ``{image}``, ``{mask}`` and ``{output}``
    explicitly; a template without placeholders gets the standard
    ``--image X --mask Y --output Z`` arguments appended.
    """
    if not template or not template.strip():
        raise ValueError("external backend command is empty")
    paths = {
        "image": shlex.quote(str(image)),
        "mask": shlex.quote(str(mask)),
        "output": shlex.quote(str(output)),
    }
    if any("{%s}" % key in template for key in paths):
        return template.format(**paths)
    return (
        f"{template} --image {paths['image']}"
        f" --mask {paths['mask']} --output {paths['output']}"
    )


def inpaint_external(request: InpaintRequest) -> InpaintResult:
    """Run an external inpainting command on a request.

    Writes ``image.png`` (RGB) and ``mask.png`` (grayscale, 255 = hole)
    into a private temp directory (rooted at $CURVREPAIR_TMPDIR when
    set), invokes the command, reads back ``output.png``, and restores
    every unmasked pixel from the request image so backend drift in the
    context region cannot leak into the deformation loop.

    Raises
    ------
    BackendError
        Nonzero exit status, missing output file, undecodable or
        wrong-sized output.  Captured stderr rides along.
    BackendTimeoutError
        The process exceeded ``request.timeout`` seconds and was killed.
    """
    request.validate()
    if request.command is None:
        raise ValueError("inpaint_external needs a command template")

    started = time.perf_counter()
    workdir = Path(
        tempfile.mkdtemp(
            prefix="curvrepair-", dir=os.environ.get("CURVREPAIR_TMPDIR") or None
        )
    )
    try:
        image_path = workdir / "image.png"
        mask_path = workdir / "mask.png"
        output_path = workdir / "output.png"
        save_png(image_path, request.image)
        save_png(mask_path, request.mask.astype(bool))

        command = _format_command(request.command, image_path, mask_path, output_path)
        argv = shlex.split(command)
        logger.debug("running inpainting backend: %s", command)
        try:
            proc = subprocess.run(
                argv,
                capture_output=True,
                text=True,
                timeout=request.timeout,
            )
        except subprocess.TimeoutExpired as exc:
            stderr = exc.stderr or ""
            if isinstance(stderr, bytes):
                stderr = stderr.decode("utf-8", "replace")
            raise BackendTimeoutError(
                f"backend timed out after {request.timeout:g}s: {argv[0]}", stderr
            ) from None
        except OSError as exc:
            raise BackendError(f"backend could not be launched: {exc}") from None

        if proc.returncode != 0:
            raise BackendError(
                f"backend exited with status {proc.returncode}: {argv[0]}",
                proc.stderr,
            )
        if not output_path.exists():
            raise BackendError(
                f"backend wrote no output image: {output_path.name}", proc.stderr
            )
        try:
            produced = load_rgb(output_path)
        except Exception as exc:  # undecodable file
            raise BackendError(f"backend output unreadable: {exc}", proc.stderr)
        if produced.shape != request.image.shape:
            raise BackendError(
                f"backend output is {produced.shape[1]}x{produced.shape[0]}, "
                f"expected {request.image.shape[1]}x{request.image.shape[0]}",
                proc.stderr,
            )

        mask = request.mask.astype(bool)
        result = request.image.copy()
        result[mask] = produced[mask]
        elapsed = time.perf_counter() - started
        return InpaintResult(result, f"external:{argv[0]}", elapsed)
    finally:
        shutil.rmtree(workdir, ignore_errors=True)


def run_inpaint(request: InpaintRequest) -> InpaintResult:
    """Dispatch a request to the built-in or external backend."""
    if request.command is None:
        request.validate()
        started = time.perf_counter()
        image = inpaint_builtin(request.image, request.mask)
        return InpaintResult(image, "builtin", time.perf_counter() - started)
    return inpaint_external(request)


class BuiltinBackend:
    """Diffusion fill behind the common backend interface."""

    backend_id = "builtin"

    def inpaint(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray:
        return inpaint_builtin(image, mask)


class ExternalBackend:
    """External command behind the common backend interface."""

    def __init__(self, command: str, timeout: float = DEFAULT_TIMEOUT):
        if not command or not command.strip():
            raise ValueError("external backend command is empty")
        if not timeout > 0:
            raise ValueError(f"timeout must be positive, got {timeout}")
        self.command = command
        self.timeout = timeout
        self.backend_id = f"external:{shlex.split(command)[0]}"

    def inpaint(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray:
        request = InpaintRequest(
            image=image, mask=mask, command=self.command, timeout=self.timeout
        )
        return inpaint_external(request).image
