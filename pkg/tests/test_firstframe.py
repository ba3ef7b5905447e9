import stat
import sys
import textwrap

import numpy as np
import pytest

from vtryon import (
    EditorRequest,
    OracleEditor,
    PipelineError,
    oracle_edit,
    plug_editor,
)
from vtryon.synthdata import render_garment, warp_garment_onto


@pytest.fixture(scope="module")
def sample(tiny_manifest):
    return tiny_manifest.load_sample(0)


def other_garment(tiny_manifest, sample):
    pool = tiny_manifest.garment_pool()
    return next(g for g in pool if g.garment_id != sample.g_worn)


def test_oracle_matches_rendered_truth_bitwise(tiny_manifest, sample):
    """Editing the first frame to garment g must equal frame 0 of the exact
    g-truth video, byte for byte."""
    garment = other_garment(tiny_manifest, sample)
    edited = oracle_edit(
        sample.source_video[0],
        "swap",
        render_garment(garment),
        sample.scene.torso_quad(0),
    )
    truth = sample.truth_videos[garment.garment_id][0]
    assert edited.tobytes() == truth.tobytes()


def test_oracle_with_worn_garment_is_identity(sample):
    edited = oracle_edit(
        sample.source_video[0],
        "keep",
        sample.garment_image,
        sample.scene.torso_quad(0),
    )
    assert edited.tobytes() == sample.source_video[0].tobytes()


def test_oracle_requires_quad(sample):
    editor = OracleEditor()
    request = EditorRequest(
        i_0=sample.source_video[0],
        instruction="swap",
        garment_image=sample.garment_image,
        torso_quad0=None,
    )
    with pytest.raises(PipelineError, match="torso quad"):
        editor(request)


def test_result_validation_rejects_bad_editors(sample):
    request = EditorRequest(
        i_0=sample.source_video[0],
        instruction="swap",
        garment_image=sample.garment_image,
        torso_quad0=sample.scene.torso_quad(0),
    )

    from vtryon.firstframe import _validate_result

    for payload, message in (
        (np.zeros((3, 4, 4), dtype=np.float32), "shape"),
        (np.full_like(request.i_0, np.nan), "non-finite"),
        (np.full_like(request.i_0, 2.0), "outside"),
    ):
        with pytest.raises(PipelineError, match=message):
            _validate_result(payload, request, "broken")


def write_script(tmp_path, body: str, name: str = "editor.py"):
    script = tmp_path / name
    script.write_text(
        "#!/usr/bin/env python3\n" + textwrap.dedent(body), encoding="utf-8"
    )
    script.chmod(script.stat().st_mode | stat.S_IEXEC)
    return script


def test_subprocess_editor_round_trip(tmp_path, sample):
    """A pass-through external editor returns i0 byte-identically through the
    request-directory file contract."""
    script = write_script(
        tmp_path,
        """
        import json, sys
        from pathlib import Path
        from vtryon.tensorio import read_tensor, write_tensor

        workdir = Path(sys.argv[1])
        request = json.loads((workdir / "request.json").read_text())
        i0 = read_tensor(workdir / "i0.tns")
        garment = read_tensor(workdir / "garment.tns")
        assert list(i0.shape) == request["dims"]
        assert garment.ndim == 3
        assert isinstance(request["instruction"], str)
        write_tensor(workdir / "ir.tns", i0)
        """,
    )
    editor = plug_editor("copycat", [sys.executable, str(script)])
    request = EditorRequest(
        i_0=sample.source_video[0],
        instruction="pass through",
        garment_image=sample.garment_image,
        torso_quad0=None,
    )
    result = editor(request)
    assert result.editor_name == "copycat"
    assert result.i_r.tobytes() == sample.source_video[0].tobytes()


def test_subprocess_editor_failure_modes(tmp_path, sample):
    request = EditorRequest(
        i_0=sample.source_video[0],
        instruction="x",
        garment_image=sample.garment_image,
        torso_quad0=None,
    )
    crasher = write_script(
        tmp_path, "import sys\nsys.stderr.write('boom')\nsys.exit(3)\n", "crash.py"
    )
    with pytest.raises(PipelineError, match="'crash'.*code 3.*boom"):
        plug_editor("crash", [sys.executable, str(crasher)])(request)

    lazy = write_script(tmp_path, "pass\n", "lazy.py")
    with pytest.raises(PipelineError, match="no ir.tns"):
        plug_editor("lazy", [sys.executable, str(lazy)])(request)


def test_subprocess_editor_output_validated(tmp_path, sample):
    script = write_script(
        tmp_path,
        """
        import sys
        import numpy as np
        from pathlib import Path
        from vtryon.tensorio import write_tensor

        workdir = Path(sys.argv[1])
        write_tensor(workdir / "ir.tns", np.full((3, 2, 2), 0.5, dtype=np.float32))
        """,
    )
    request = EditorRequest(
        i_0=sample.source_video[0],
        instruction="x",
        garment_image=sample.garment_image,
        torso_quad0=None,
    )
    with pytest.raises(PipelineError, match="shape"):
        plug_editor("tiny", [sys.executable, str(script)])(request)


def test_plug_editor_rejects_empty_command():
    with pytest.raises(PipelineError, match="empty command"):
        plug_editor("ghost", [])


def test_warp_identity_shared_with_renderer(sample):
    """The oracle and the renderer literally share warp_garment_onto."""
    frame = sample.source_video[0].astype(np.float64)
    quad = sample.scene.torso_quad(0)
    direct = warp_garment_onto(frame, sample.garment_image, quad).astype(np.float32)
    via_editor = oracle_edit(sample.source_video[0], "i", sample.garment_image, quad)
    assert direct.tobytes() == via_editor.tobytes()
