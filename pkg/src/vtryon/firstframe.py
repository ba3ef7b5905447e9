"""One-time first-frame garment edit: oracle plus subprocess plug-in.

The oracle repaints the frame-0 torso quad with the requested garment using
the renderer's own warp, so its output matches rendered ground truth
bit-for-bit. A real image try-on model can replace it through the file
contract: a request directory with i0.tns, garment.tns, request.json; the
editor writes ir.tns.
"""

from __future__ import annotations

import json
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensorio
from .errors import PipelineError
from .synthdata import warp_garment_onto


@dataclass
class EditorRequest:
    i_0: np.ndarray  # (3, H, W) float32 source first frame
    instruction: str
    garment_image: np.ndarray  # (3, Hg, Wg)
    torso_quad0: np.ndarray | None = None  # oracle-only scene metadata


@dataclass
class EditorResult:
    i_r: np.ndarray
    editor_name: str


def _validate_result(i_r: np.ndarray, request: EditorRequest, editor_name: str) -> np.ndarray:
    i_r = np.asarray(i_r, dtype=np.float32)
    if i_r.shape != request.i_0.shape:
        raise PipelineError(
            f"editor {editor_name!r} returned shape {i_r.shape}, "
            f"expected {request.i_0.shape}"
        )
    if not np.isfinite(i_r).all():
        raise PipelineError(f"editor {editor_name!r} returned non-finite pixels")
    if i_r.min() < -1e-6 or i_r.max() > 1.0 + 1e-6:
        raise PipelineError(
            f"editor {editor_name!r} returned pixels outside [0,1]: "
            f"range [{i_r.min():.4f}, {i_r.max():.4f}]"
        )
    return i_r


class OracleEditor:
    """Exact edit: repaint the torso quad with the requested garment. The
    instruction is accepted and ignored; only the backbone's text stub
    consumes it."""

    name = "oracle"

    def __call__(self, request: EditorRequest) -> EditorResult:
        if request.torso_quad0 is None:
            raise PipelineError("oracle editor needs the frame-0 torso quad metadata")
        frame = request.i_0.astype(np.float64)
        edited = warp_garment_onto(
            frame, np.asarray(request.garment_image), np.asarray(request.torso_quad0)
        ).astype(np.float32)
        return EditorResult(
            i_r=_validate_result(edited, request, self.name), editor_name=self.name
        )


def oracle_edit(
    i_0: np.ndarray,
    instruction: str,
    garment_image: np.ndarray,
    torso_quad0: np.ndarray,
) -> np.ndarray:
    """Functional form of the oracle."""
    request = EditorRequest(
        i_0=np.asarray(i_0, dtype=np.float32),
        instruction=instruction,
        garment_image=garment_image,
        torso_quad0=torso_quad0,
    )
    return OracleEditor()(request).i_r


class SubprocessEditor:
    """External editor honoring the request-directory file contract. The
    command is invoked with the request directory appended as its final
    argument and must write ir.tns there."""

    def __init__(self, name: str, command: list[str]):
        self.name = name
        self.command = list(command)

    def __call__(self, request: EditorRequest) -> EditorResult:
        with tempfile.TemporaryDirectory(prefix="editor_") as tmp:
            workdir = Path(tmp)
            tensorio.write_tensor(workdir / "i0.tns", request.i_0)
            tensorio.write_tensor(workdir / "garment.tns", request.garment_image)
            (workdir / "request.json").write_text(
                json.dumps(
                    {
                        "instruction": request.instruction,
                        "dims": list(request.i_0.shape),
                    },
                    sort_keys=True,
                ),
                encoding="utf-8",
            )
            proc = subprocess.run(
                self.command + [str(workdir)], capture_output=True, text=True
            )
            if proc.returncode != 0:
                raise PipelineError(
                    f"editor {self.name!r} exited with code {proc.returncode}: "
                    f"{proc.stderr.strip()[:500]}"
                )
            out_path = workdir / "ir.tns"
            if not out_path.exists():
                raise PipelineError(
                    f"editor {self.name!r} produced no ir.tns in the request directory"
                )
            i_r = tensorio.read_tensor(out_path)
        return EditorResult(
            i_r=_validate_result(i_r, request, self.name), editor_name=self.name
        )


def plug_editor(name: str, command: list[str]) -> SubprocessEditor:
    if not command:
        raise PipelineError(f"editor {name!r} registered with an empty command")
    return SubprocessEditor(name, command)
