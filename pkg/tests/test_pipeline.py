import dataclasses
import json

import numpy as np
import pytest
import torch

from test_backbone import make_inputs

from vtryon import (
    ConfigError,
    FormatError,
    GenConfig,
    LoraConfig,
    OracleEditor,
    PipelineError,
    TrainConfig,
    build_bundle,
    build_dataset,
    continue_training,
    load_checkpoint,
    load_train_state,
    run_ablation,
    run_eval,
    run_tryon,
    save_checkpoint,
    train_model,
)
from vtryon.adapters import has_adapters
from vtryon.codec import CodecParams
from vtryon.flowmatch import VARIANTS, trainable_named_parameters
from vtryon.pipeline import (
    checkpoint_tensors,
    default_codec_params,
    derangement,
    model_config_for_manifest,
    validate_geometry,
    write_loss_csv,
)


@pytest.fixture()
def bundle(tiny_model_cfg):
    return build_bundle(
        tiny_model_cfg,
        lora_cfg=LoraConfig(),
        train_cfg=TrainConfig(steps=8, checkpoint_interval=4),
    )


def perturb_trainable(bundle, seed=5):
    """Give adapters and guider nonzero weights so loads are distinguishable
    from a fresh init."""
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for name, param in trainable_named_parameters(bundle.backbone, bundle.guider):
            noise = rng.standard_normal(tuple(param.shape)).astype(np.float32)
            param.add_(0.02 * torch.as_tensor(noise))
    return bundle


# ---------------------------------------------------------------------------
# geometry and bundle construction


def test_validate_geometry_mismatch(tiny_model_cfg):
    good = default_codec_params(tiny_model_cfg)
    validate_geometry(tiny_model_cfg, good)
    for field in ("d", "patch_size", "height", "width"):
        bad = dataclasses.replace(good, **{field: good.__getattribute__(field) * 2})
        with pytest.raises(ConfigError, match=f"geometry mismatch on {field}"):
            validate_geometry(tiny_model_cfg, bad)


def test_model_config_for_manifest(tiny_manifest):
    cfg = model_config_for_manifest(tiny_manifest)
    gen = tiny_manifest.config
    assert (cfg.frames, cfg.height, cfg.width, cfg.patch_size) == (
        gen.num_frames,
        gen.height,
        gen.width,
        gen.patch_size,
    )
    assert model_config_for_manifest(tiny_manifest, d=32, n_blocks=1).d == 32


def test_build_bundle_variant_and_guider(tiny_model_cfg):
    plain = build_bundle(tiny_model_cfg)
    assert plain.variant == "full"
    assert plain.guider is not None
    assert plain.lora_cfg is None

    no_guider = build_bundle(tiny_model_cfg, with_guider=False)
    assert no_guider.guider is None

    tuned = build_bundle(
        tiny_model_cfg, train_cfg=TrainConfig(steps=1, variant="no_pose")
    )
    assert tuned.variant == "no_pose"


# ---------------------------------------------------------------------------
# checkpoint round trips


def test_checkpoint_tensor_names(bundle):
    names = set(checkpoint_tensors(bundle))
    assert "lora.0.q.A" in names and "lora.0.q.B" in names
    assert "guider.convs.0.weight" in names
    assert "text_embed.weight" in names
    assert all(not n.startswith("opt.") for n in names)


def test_checkpoint_round_trip_bitwise(bundle, tmp_path):
    perturb_trainable(bundle)
    save_checkpoint(tmp_path, bundle, state=None)
    loaded = load_checkpoint(tmp_path)

    assert loaded.model_cfg == bundle.model_cfg
    assert loaded.codec_params == bundle.codec_params
    assert loaded.lora_cfg == bundle.lora_cfg
    assert loaded.train_cfg == bundle.train_cfg

    want = checkpoint_tensors(bundle)
    got = checkpoint_tensors(loaded)
    assert set(want) == set(got)
    for name in want:
        assert torch.equal(want[name], got[name]), name


def test_checkpoint_merged_load_matches_adapted(bundle, tmp_path, tiny_model_cfg):
    perturb_trainable(bundle)
    save_checkpoint(tmp_path, bundle)
    adapted = load_checkpoint(tmp_path)
    merged = load_checkpoint(tmp_path, merged=True)

    assert has_adapters(adapted.backbone)
    assert not has_adapters(merged.backbone)
    assert merged.lora_cfg is None

    x_t, seq = make_inputs(tiny_model_cfg, seed=2)
    with torch.no_grad():
        out_a = adapted.backbone(x_t, seq, 0.5)
        out_m = merged.backbone(x_t, seq, 0.5)
    assert torch.allclose(out_a, out_m, rtol=1e-5, atol=1e-6)


def test_load_checkpoint_error_paths(bundle, tmp_path):
    with pytest.raises(FormatError, match="no config.json"):
        load_checkpoint(tmp_path / "nowhere")

    save_checkpoint(tmp_path, bundle)

    config_path = tmp_path / "config.json"
    blob = json.loads(config_path.read_text())
    blob["format_version"] = "9"
    backup = config_path.read_text()
    config_path.write_text(json.dumps(blob))
    with pytest.raises(FormatError, match="format_version"):
        load_checkpoint(tmp_path)
    config_path.write_text(backup)

    moved = tmp_path / "lora.0.q.A.tns"
    payload = moved.read_bytes()
    moved.unlink()
    with pytest.raises(FormatError, match="missing tensor 'lora.0.q.A'"):
        load_checkpoint(tmp_path)
    moved.write_bytes(payload)

    rogue = tmp_path / "rogue.tns"
    rogue.write_bytes(payload)
    with pytest.raises(FormatError, match="unexpected tensor.*rogue"):
        load_checkpoint(tmp_path)
    rogue.unlink()

    from vtryon import tensorio

    tensorio.write_tensor(moved, np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(FormatError, match="has shape"):
        load_checkpoint(tmp_path)


def test_opt_moment_files_are_tolerated(tiny_manifest, tiny_model_cfg, tmp_path):
    cfg = TrainConfig(steps=2, checkpoint_interval=2)
    train_model(tiny_manifest, cfg, tiny_model_cfg, out_dir=tmp_path)
    final = tmp_path / "final"
    assert any(p.name.startswith("opt.") for p in final.glob("*.tns"))
    load_checkpoint(final)  # moment files must not trip the unknown-tensor check


# ---------------------------------------------------------------------------
# training state and resume


def test_load_train_state_requires_training_artifacts(tiny_model_cfg, tmp_path):
    untrained = build_bundle(tiny_model_cfg, lora_cfg=LoraConfig())
    save_checkpoint(tmp_path / "a", untrained)
    with pytest.raises(FormatError, match="no training config"):
        load_train_state(tmp_path / "a")

    with_cfg = build_bundle(
        tiny_model_cfg, lora_cfg=LoraConfig(), train_cfg=TrainConfig(steps=4)
    )
    save_checkpoint(tmp_path / "b", with_cfg)
    with pytest.raises(FormatError, match="no training_state.json"):
        load_train_state(tmp_path / "b")


def test_load_train_state_missing_moments(tiny_manifest, tiny_model_cfg, tmp_path):
    cfg = TrainConfig(steps=2, checkpoint_interval=2)
    train_model(tiny_manifest, cfg, tiny_model_cfg, out_dir=tmp_path)
    final = tmp_path / "final"
    victim = next(final.glob("opt.*.m1.tns"))
    victim.unlink()
    with pytest.raises(FormatError, match="missing optimizer moments"):
        load_train_state(final)


def test_resume_is_bit_identical(tiny_manifest, tiny_model_cfg, tmp_path):
    cfg = TrainConfig(steps=8, checkpoint_interval=4, seed=3)
    straight, history = train_model(
        tiny_manifest, cfg, tiny_model_cfg, out_dir=tmp_path / "full_run"
    )
    assert len(history) == 8

    resumed, state = load_train_state(tmp_path / "full_run" / "step_00004")
    assert state.step == 4
    assert state.loss_history == history[:4]

    samples = [
        tiny_manifest.load_sample(i, include_truth=False)
        for i in tiny_manifest.indices("train")
    ]
    resumed_history = continue_training(samples, resumed, state)
    assert resumed_history == history

    want = checkpoint_tensors(straight)
    got = checkpoint_tensors(resumed)
    for name in want:
        assert torch.equal(want[name], got[name]), name


def test_train_model_geometry_error(tiny_manifest):
    wrong = model_config_for_manifest(tiny_manifest, frames=5)
    with pytest.raises(ConfigError, match="dataset geometry"):
        train_model(tiny_manifest, TrainConfig(steps=1), wrong)


def test_continue_training_rejects_empty_split(bundle):
    from vtryon.flowmatch import TrainState, make_optimizer

    state = TrainState(
        model=bundle.backbone,
        guider=bundle.guider,
        codec=bundle.codec,
        config=bundle.train_cfg,
        optimizer=make_optimizer(bundle.backbone, bundle.guider, bundle.train_cfg),
    )
    with pytest.raises(PipelineError, match="empty training split"):
        continue_training([], bundle, state)


def test_write_loss_csv_round_trips(tmp_path):
    history = [0.5, 1.0 / 3.0, 0.125]
    path = tmp_path / "loss.csv"
    write_loss_csv(path, history)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "step,loss"
    parsed = [float(line.split(",")[1]) for line in lines[1:]]
    assert parsed == history


# ---------------------------------------------------------------------------
# single-sample inference


@pytest.fixture(scope="module")
def eval_sample(tiny_manifest):
    return tiny_manifest.load_sample(tiny_manifest.indices("eval")[0])


@pytest.fixture(scope="module")
def garment_pool(tiny_manifest):
    return {g.garment_id: g for g in tiny_manifest.garment_pool()}


def test_run_tryon_contract(tiny_bundle, eval_sample, garment_pool, tiny_gen_config):
    gid = eval_sample.g_worn
    result = run_tryon(eval_sample, garment_pool[gid], tiny_bundle, seed=4, steps=3)
    g = tiny_gen_config
    assert result.video.shape == (g.num_frames, 3, g.height, g.width)
    assert result.video.dtype == np.float32
    assert result.edited_frame.shape == (3, g.height, g.width)
    assert result.editor_calls == 1
    assert result.assemble_calls == 1
    assert result.garment_id == gid
    assert result.variant == "full"
    assert (result.seed, result.steps) == (4, 3)

    again = run_tryon(eval_sample, garment_pool[gid], tiny_bundle, seed=4, steps=3)
    np.testing.assert_array_equal(result.video, again.video)
    other = run_tryon(eval_sample, garment_pool[gid], tiny_bundle, seed=5, steps=3)
    assert not np.array_equal(result.video, other.video)


def test_run_tryon_editor_name_and_explicit_editor(tiny_bundle, eval_sample, garment_pool):
    result = run_tryon(
        eval_sample,
        garment_pool[eval_sample.g_worn],
        tiny_bundle,
        steps=1,
        editor=OracleEditor(),
    )
    assert "oracle" in result.editor_name.lower()


def test_run_tryon_accepts_raw_garment_image(tiny_bundle, eval_sample):
    result = run_tryon(eval_sample, eval_sample.garment_image, tiny_bundle, steps=1)
    assert result.garment_id is None


def test_run_tryon_validation_errors(tiny_bundle, eval_sample, garment_pool):
    garment = garment_pool[eval_sample.g_worn]
    with pytest.raises(ConfigError, match="steps"):
        run_tryon(eval_sample, garment, tiny_bundle, steps=0)
    with pytest.raises(ConfigError, match="unknown variant"):
        run_tryon(eval_sample, garment, tiny_bundle, steps=1, variant="bogus")
    with pytest.raises(ConfigError, match="GarmentSpec or"):
        run_tryon(eval_sample, np.zeros((4, 4), dtype=np.float32), tiny_bundle, steps=1)


def test_run_tryon_variant_override(tiny_bundle, eval_sample, garment_pool):
    garment = garment_pool[eval_sample.g_worn]
    base = run_tryon(eval_sample, garment, tiny_bundle, seed=1, steps=2)
    swapped = run_tryon(
        eval_sample, garment, tiny_bundle, seed=1, steps=2, variant="no_pose"
    )
    assert swapped.variant == "no_pose"
    assert not np.array_equal(base.video, swapped.video)


def test_run_tryon_pin_first_frame(tiny_bundle, eval_sample, garment_pool):
    garment = garment_pool[eval_sample.g_worn]
    pinned = run_tryon(
        eval_sample, garment, tiny_bundle, steps=1, pin_first_frame=True
    )
    np.testing.assert_array_equal(pinned.video[0], pinned.edited_frame)
    free = run_tryon(
        eval_sample, garment, tiny_bundle, steps=1, pin_first_frame=False
    )
    assert not np.array_equal(free.video[0], free.edited_frame)


def test_run_tryon_wraps_stage_failures(tiny_bundle, eval_sample, garment_pool):
    def exploding_editor(request):
        raise ValueError("kaboom")

    with pytest.raises(PipelineError, match="stage 'edit-first-frame' failed.*kaboom"):
        run_tryon(
            eval_sample,
            garment_pool[eval_sample.g_worn],
            tiny_bundle,
            steps=1,
            editor=exploding_editor,
        )


# ---------------------------------------------------------------------------
# unpaired assignment


def test_derangement_has_no_fixed_points():
    worn = [0, 1, 2, 0, 1, 2, 3]
    for seed in range(20):
        perm = derangement(worn, seed)
        assert sorted(perm) == list(range(len(worn)))
        assert all(worn[perm[i]] != worn[i] for i in range(len(worn)))


def test_derangement_deterministic():
    worn = [0, 1, 2, 3]
    assert derangement(worn, 9) == derangement(worn, 9)


def test_derangement_with_repeated_ids():
    worn = [0, 0, 1, 1]
    perm = derangement(worn, 0)
    assert all(worn[perm[i]] != worn[i] for i in range(4))


def test_derangement_error_cases():
    with pytest.raises(PipelineError, match="at least 2"):
        derangement([0], 0)
    with pytest.raises(PipelineError, match="same garment"):
        derangement([7, 7, 7], 0)
    with pytest.raises(PipelineError, match="no valid unpaired assignment"):
        derangement([0, 1], 0, max_tries=0)


# ---------------------------------------------------------------------------
# evaluation


def test_run_eval_paired_writes_reports(tiny_manifest, tiny_bundle, tmp_path):
    report = run_eval(
        tiny_manifest, tiny_bundle, setting="paired", steps=2, out_dir=tmp_path
    )
    assert report.setting == "paired"
    assert report.sample_count == len(tiny_manifest.indices("eval"))
    assert -1.0 <= report.ssim <= 1.0
    assert report.perc >= 0.0
    assert report.fvd >= 0.0

    blob = json.loads((tmp_path / "report.json").read_text())
    assert blob["format_version"] == "1"
    assert blob["ssim"] == pytest.approx(report.ssim)

    lines = (tmp_path / "metrics.csv").read_text().strip().splitlines()
    assert lines[0] == "index,garment_id,ssim,perc"
    assert len(lines) == 1 + report.sample_count


def test_run_eval_unpaired(tiny_gen_config, tiny_bundle, tmp_path):
    cfg = dataclasses.replace(tiny_gen_config, seed=2)  # eval split wears 3 distinct garments
    manifest = build_dataset(cfg, tmp_path / "dataset")
    report = run_eval(manifest, tiny_bundle, setting="unpaired", steps=2)
    assert report.setting == "unpaired"
    assert report.sample_count == len(manifest.indices("eval"))


def test_run_eval_unpaired_needs_derangeable_split(tiny_manifest, tiny_bundle):
    # this split wears [2, 0, 2]: the lone garment-0 wearer cannot swap with
    # both garment-2 wearers, so no permutation works and the run must say so
    with pytest.raises(PipelineError, match="unpaired assignment"):
        run_eval(tiny_manifest, tiny_bundle, setting="unpaired", steps=2)


def test_run_eval_bad_setting(tiny_manifest, tiny_bundle):
    with pytest.raises(ConfigError, match="paired or unpaired"):
        run_eval(tiny_manifest, tiny_bundle, setting="sideways")


def test_run_eval_empty_split(tmp_path, tiny_bundle):
    cfg = GenConfig(
        num_frames=6,
        height=32,
        width=32,
        patch_size=4,
        garment_size=16,
        pool_size=2,
        train_samples=1,
        eval_samples=0,
        seed=0,
    )
    manifest = build_dataset(cfg, tmp_path / "dataset")
    with pytest.raises(PipelineError, match="empty eval split"):
        run_eval(manifest, tiny_bundle)


# ---------------------------------------------------------------------------
# ablation harness


def test_run_ablation_smoke(tiny_manifest, tiny_model_cfg, tmp_path):
    rows = run_ablation(
        tiny_manifest,
        TrainConfig(steps=2, checkpoint_interval=2),
        variants=("full", "no_both"),
        seeds=(0,),
        model_cfg=tiny_model_cfg,
        eval_steps=2,
        out_dir=tmp_path,
    )
    assert [(r["variant"], r["seed"]) for r in rows] == [("full", 0), ("no_both", 0)]
    for row in rows:
        assert row["steps"] == 2
        assert len(row["loss_history"]) == 2
        assert (tmp_path / "checkpoints" / f"{row['variant']}_seed0" / "final").is_dir()

    lines = (tmp_path / "ablation.csv").read_text().strip().splitlines()
    assert lines[0] == "variant,seed,steps,ssim,perc,fvd,final_loss"
    assert len(lines) == 3

    reloaded = load_checkpoint(rows[0]["checkpoint"])
    assert reloaded.train_cfg.variant == "full"


def test_run_ablation_validates_variants(tiny_manifest):
    with pytest.raises(ConfigError, match="at least one variant"):
        run_ablation(tiny_manifest, TrainConfig(steps=1), variants=())
    with pytest.raises(ConfigError, match="unknown variant"):
        run_ablation(tiny_manifest, TrainConfig(steps=1), variants=("sideways",))


def test_variants_tuple_is_stable():
    assert VARIANTS == ("full", "no_pose", "no_agnostic", "no_both")
