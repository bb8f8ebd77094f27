"""Acceptance criteria, each run at its stated tolerance.

Every test carries ``@pytest.mark.acceptance(name)``; the conftest prints one
PASS/FAIL line per criterion at the end of the session. The training
experiments (overfit, fusion, ablation) take several minutes each.
"""

import math
import time
import zlib

import numpy as np
import pytest

from msnn.cli import main
from msnn.data import ClipDataset, PipelineConfig, SyntheticSpec, generate_synthetic_dataset, load_manifest, prepare_dataset
from msnn.flow import tvl1_flow
from msnn.fusion import ALL_ABLATIONS, AblationSettings, mean_accuracy, run_ablation
from msnn.gradcheck import grad_check
from msnn.metrics import top_n_accuracy
from msnn.models import DESK_I3D_OVERRIDES, ModelConfig, build_model, stream_model_config
from msnn.regions import face_box, hand_box
from msnn.skeleton import Keypoint
from msnn.tensor import Tensor, no_grad
from msnn.training import TrainConfig, train_stream

from oracles import i3d_2d_oracle, sort_rank_top_n
from test_flow import INTERIOR, grid, sample
from test_models import end_to_end_errors, randomize
from test_regions import hand_box_by_hand
from test_tensor import OP_CASES

STREAM_ORDER = ("skeleton", "face", "left_hand", "right_hand", "flow", "rgb")


def detail(record, text):
    record("detail", text)


# -- geometry --------------------------------------------------------------------------

@pytest.mark.acceptance("Geometry oracle")
def test_geometry_oracle(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        s, e, w = (rng.uniform(-500, 500, 2) for _ in range(3))
        (cx, cy), side = hand_box_by_hand(s, e, w)
        box = hand_box(*(Keypoint(*p, 1.0) for p in (s, e, w)))
        worst = max(worst, abs(box.center[0] - cx), abs(box.center[1] - cy), abs(box.side - side))
        r, l = rng.uniform(-500, 500, 2), rng.uniform(-500, 500, 2)
        face = face_box(Keypoint(*r, 1.0), Keypoint(*l, 1.0))
        expect = ((r[0] + l[0]) / 2, (r[1] + l[1]) / 2), 1.5 * math.hypot(*(l - r))
        worst = max(worst, abs(face.center[0] - expect[0][0]), abs(face.center[1] - expect[0][1]),
                    abs(face.side - expect[1]))
    # equivariance: power-of-two scaling is exact in floating point, so it is checked bit for bit;
    # integer translations of integer keypoints are checked at rounding level
    scale_exact = True
    translate_err = 0.0
    for _ in range(1000):
        pts = rng.integers(-300, 300, (3, 2)).astype(float)
        t = rng.integers(-200, 200, 2).astype(float)
        k = 2.0 ** int(rng.integers(-4, 5))
        base = hand_box(*(Keypoint(*p, 1.0) for p in pts))
        scaled = hand_box(*(Keypoint(*(p * k), 1.0) for p in pts))
        moved = hand_box(*(Keypoint(*(p + t), 1.0) for p in pts))
        scale_exact &= (scaled.center == (base.center[0] * k, base.center[1] * k) and scaled.side == base.side * k)
        translate_err = max(translate_err, abs(moved.center[0] - base.center[0] - t[0]),
                            abs(moved.center[1] - base.center[1] - t[1]), abs(moved.side - base.side))
        fb, fs = face_box(Keypoint(*pts[0], 1.0), Keypoint(*pts[1], 1.0)), \
            face_box(Keypoint(*(pts[0] * k), 1.0), Keypoint(*(pts[1] * k), 1.0))
        scale_exact &= fs.center == (fb.center[0] * k, fb.center[1] * k) and fs.side == fb.side * k
    elapsed = time.perf_counter() - start
    detail(record_property, f"max oracle error {worst:.1e}, power-of-two scaling exact={scale_exact}, "
                            f"translation error {translate_err:.1e}, {elapsed:.2f}s")
    assert worst <= 1e-9 and scale_exact and translate_err <= 1e-9 and elapsed < 5


# -- gradients ----------------------------------------------------------------------------

@pytest.mark.acceptance("Gradient suite")
def test_gradient_suite(record_property):
    start = time.perf_counter()
    op_errors = {}
    for name in sorted(OP_CASES):
        rng = np.random.default_rng(zlib.crc32(name.encode()) % 1000)
        inputs, op = OP_CASES[name](rng)
        probe = {}

        def fn(*args):
            out = op(*args)
            if "p" not in probe:
                probe["p"] = np.random.default_rng(99).standard_normal(out.shape)
            return (out * Tensor(probe["p"])).sum()

        op_errors[name] = grad_check(fn, inputs, 1e-4)
    rng = np.random.default_rng(7)
    i3d = build_model(ModelConfig(4, width_multiplier=0.125, inception_blocks=2, input_size=32,
                                  stem_kernel=(3, 3, 3), seed=6))
    randomize(i3d, rng)
    e2e = list(end_to_end_errors(i3d, Tensor(rng.random((1, 3, 8, 32, 32))), np.array([1]), rng, max_checks=4))
    rng = np.random.default_rng(14)
    stgcn = build_model(ModelConfig(4, kind="stgcn", stgcn_channels=(4, 4, 6, 8), temporal_kernel=3, seed=4))
    randomize(stgcn, rng)
    e2e += end_to_end_errors(stgcn, Tensor(rng.standard_normal((2, 2, 8, 27))), np.array([0, 3]), rng, max_checks=6)
    elapsed = time.perf_counter() - start
    worst_op = max(op_errors, key=op_errors.get)
    detail(record_property, f"{len(op_errors)} ops, worst {worst_op} {op_errors[worst_op]:.1e} (< 1e-4); "
                            f"end-to-end worst {max(e2e):.1e} (< 1e-3); {elapsed:.1f}s")
    assert max(op_errors.values()) < 1e-4 and max(e2e) < 1e-3 and elapsed < 120


# -- flow ------------------------------------------------------------------------------------

@pytest.mark.acceptance("Flow accuracy")
def test_flow_accuracy(record_property):
    from scipy import ndimage
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    big = ndimage.gaussian_filter(rng.random((96, 96)), 2.0)
    texture = (big - big.min()) / (big.max() - big.min())
    xx, yy = grid()
    prev, nxt = sample(texture, xx, yy), sample(texture, xx - 3, yy)
    f = tvl1_flow(prev, nxt)
    epe = float(np.hypot(f.u - 3.0, f.v)[INTERIOR].mean())
    z = tvl1_flow(prev, prev)
    zero = float(np.hypot(z.u, z.v).max())
    elapsed = time.perf_counter() - start
    detail(record_property, f"interior EPE {epe:.3f} px (< 0.5), zero-motion max {zero:.1e} (< 1e-6), {elapsed:.1f}s")
    assert epe < 0.5 and zero < 1e-6 and elapsed < 30


# -- inflation -----------------------------------------------------------------------------

@pytest.mark.acceptance("Inflation consistency")
def test_inflation_consistency(record_property):
    worst = 0.0
    configs = [dict(input_size=64, **DESK_I3D_OVERRIDES), dict(input_size=32, width_multiplier=0.125)]
    for i, extra in enumerate(configs):
        model = build_model(ModelConfig(5, seed=i, **extra)).eval()
        size = extra["input_size"]
        frame = np.random.default_rng(i).random((2, 3, size, size))
        with no_grad():
            logits = model(Tensor(np.repeat(frame[:, :, None], 8, axis=2))).data
        worst = max(worst, float(np.abs(logits - i3d_2d_oracle(model, frame)).max()))
    detail(record_property, f"max |3D - 2D| logit difference {worst:.1e} (<= 1e-9) on the desk and a 7x7x7-stem model")
    assert worst <= 1e-9


# -- overfit -----------------------------------------------------------------------------------

@pytest.mark.acceptance("Overfit capacity")
def test_overfit_capacity(record_property, tmp_path):
    start = time.perf_counter()
    manifest = generate_synthetic_dataset(tmp_path / "data", SyntheticSpec(5, 20, seed=0, num_shape_pairs=0))
    cfg = PipelineConfig.desk()
    dataset = load_manifest(manifest)
    data = ClipDataset(prepare_dataset(dataset, cfg, cache_dir=tmp_path / "cache"), cfg)
    outcome = {}
    for stream in STREAM_ORDER:
        overrides = {} if stream == "skeleton" else DESK_I3D_OVERRIDES
        size = cfg.local_size if stream in ("left_hand", "right_hand", "face") else cfg.input_size
        model = build_model(stream_model_config(stream, 5, size, seed=0, **overrides))
        result = train_stream(model, data, TrainConfig(stream, epochs=200, seed=0, stop_at_train_top1=0.95))
        outcome[stream] = (len(result.history), result.history[-1].train_top1)
    elapsed = time.perf_counter() - start
    detail(record_property, ", ".join(f"{s} {top1:.2f}@{ep}ep" for s, (ep, top1) in outcome.items())
           + f"; {elapsed / 60:.1f} min (< 15)")
    assert all(top1 >= 0.95 and ep <= 200 for ep, top1 in outcome.values()) and elapsed < 15 * 60


# -- fusion and ablation -----------------------------------------------------------------------

FUSION_SEEDS = (0, 1, 2)
FUSION_EPOCHS = 25
FUSION_CLIPS_PER_CLASS = 20


@pytest.fixture(scope="module")
def ablation_rows(tmp_path_factory):
    root = tmp_path_factory.mktemp("fusion")
    manifest = generate_synthetic_dataset(root / "data", SyntheticSpec(5, FUSION_CLIPS_PER_CLASS, seed=0))
    settings = AblationSettings(pipeline=PipelineConfig.desk(), epochs=FUSION_EPOCHS,
                                model_overrides=dict(DESK_I3D_OVERRIDES))
    return run_ablation(manifest, ALL_ABLATIONS, FUSION_SEEDS, root / "ckpt", settings, cache_dir=root / "cache")


@pytest.mark.acceptance("Fusion advantage")
def test_fusion_advantage(record_property, ablation_rows):
    ours6, base2 = mean_accuracy(ablation_rows, "Ours6"), mean_accuracy(ablation_rows, "Baseline2")
    per_seed = [(r.seed, r.accuracy[1]) for r in ablation_rows if r.name in ("Ours6", "Baseline2")]
    detail(record_property, f"held-out Top-1 Ours6 {ours6:.3f} vs Baseline2 {base2:.3f} "
                            f"(+{100 * (ours6 - base2):.1f} pts, need >= 10) over seeds {FUSION_SEEDS}; {per_seed}")
    assert ours6 - base2 >= 0.10


@pytest.mark.acceptance("Ablation ordering")
def test_ablation_ordering(record_property, ablation_rows):
    means = {a.name: mean_accuracy(ablation_rows, a.name) for a in ALL_ABLATIONS}
    detail(record_property, ", ".join(f"{k} {v:.3f}" for k, v in means.items()))
    assert means["Ours6"] >= means["Baseline2"] and means["Ours6"] >= means["Baseline1"]


# -- evaluator ------------------------------------------------------------------------------------

@pytest.mark.acceptance("Evaluator correctness")
def test_evaluator_correctness(record_property):
    rng = np.random.default_rng(10_000)
    mismatches = monotone_violations = 0
    for i in range(10_000):
        c = int(rng.integers(1, 16))
        n = int(rng.integers(1, 13))
        # every third matrix is coarse so ties are common
        scores = rng.integers(0, 3, (n, c)).astype(float) if i % 3 == 0 else rng.random((n, c))
        labels = rng.integers(0, c, n)
        accs = []
        for k in (1, 5, 10):
            if k > c:
                continue
            got = top_n_accuracy(scores, labels, k)
            mismatches += got != sort_rank_top_n(scores, labels, k)
            accs.append(got)
        monotone_violations += accs != sorted(accs)
    detail(record_property, f"10000 matrices: {mismatches} mismatches with the sort recount, "
                            f"{monotone_violations} Top-1/5/10 order violations")
    assert mismatches == 0 and monotone_violations == 0


# -- determinism ------------------------------------------------------------------------------------

@pytest.mark.acceptance("Determinism")
def test_determinism(record_property, tmp_path):
    assert main(["synth", "--classes", "3", "--clips-per-class", "6", "--seed", "3", "--out",
                 str(tmp_path / "data"), "--frame-size", "96"]) == 0
    manifest = str(tmp_path / "data" / "manifest.csv")
    compared = []
    for stream in ("rgb", "skeleton"):
        for run in ("a", "b"):
            assert main(["train", "--manifest", manifest, "--stream", stream, "--epochs", "3", "--seed", "5",
                         "--out", str(tmp_path / run / stream), "--cache", str(tmp_path / f"cache_{run}"),
                         "--desk", "--input-size", "32", "--clip-length", "8"]) == 0
        for name in ("history.csv", "last.ckpt", "best.ckpt", "last.ckpt.json", "best.ckpt.json"):
            a, b = (tmp_path / run / stream / name for run in ("a", "b"))
            compared.append((f"{stream}/{name}", a.read_bytes() == b.read_bytes()))
    differing = [n for n, same in compared if not same]
    detail(record_property, f"{len(compared)} artifacts compared byte for byte, differing: {differing or 'none'}")
    assert not differing
