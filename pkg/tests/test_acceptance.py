"""End-to-end acceptance criteria, one test per criterion.

Each test records a ``PASS``/``FAIL`` verdict line which is echoed in the
pytest terminal summary. Criteria 4-8 train desk-scale models and take
minutes; they carry the ``slow`` marker but are part of the default run.
"""

import csv
import json
import subprocess
import sys
from fractions import Fraction

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from ssmtnet.autodiff import Tensor
from ssmtnet.data import PhantomConfig, phantom_set
from ssmtnet.evaluation import dsc, iou, overlap_counts
from ssmtnet.gradsuite import run_suite
from ssmtnet.model import GROUPS, ModelConfig, SSMTNet, cross_attention, refine_queries
from ssmtnet.model.nn import parameter_hash
from ssmtnet.training import (
    PRETRAIN_GROUPS, AblationFlags, LossWeights, PhaseConfig, charbonnier, run_pretrain, run_supervised,
    validate,
)


def verdict(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def brute_force(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    inter = union = total = 0
    for p, g in zip(pred.ravel().tolist(), gt.ravel().tolist()):
        inter += p and g
        union += p or g
        total += p + g
    return (1.0 if union == 0 else inter / union), (1.0 if total == 0 else 2 * inter / total)


def reconstruction_error(model: SSMTNet, samples) -> float:
    x = np.stack([s.image for s in samples])[:, None].astype(np.float32)
    out = model(x, branches=("rec",))
    return float(charbonnier(out.reconstruction, x).data)


def test_criterion_1_gradient_suite():
    report = run_suite(seed=0)
    worst = max(report.results, key=lambda r: r.rel_error / r.tolerance)
    verdict(1, report.passed and report.seconds < 60,
            f"{len(report.results)} checks, worst {worst.name} rel err {worst.rel_error:.2e} "
            f"(tol {worst.tolerance:g}), {report.seconds:.1f} s")


def test_criterion_2_metric_oracle():
    rng = np.random.default_rng(1000)
    mismatches = identity_failures = 0
    for _ in range(1000):
        density = rng.random(2)
        pred = (rng.random((16, 16)) < density[0]).astype(np.uint8)
        gt = (rng.random((16, 16)) < density[1]).astype(np.uint8)
        i, d = iou(pred, gt), dsc(pred, gt)
        mismatches += (i, d) != brute_force(pred, gt)
        c = overlap_counts(pred, gt)
        fi = Fraction(c.intersection, c.union) if c.union else Fraction(1)
        fd = Fraction(2 * c.intersection, c.pred + c.gt) if c.pred + c.gt else Fraction(1)
        identity_failures += fd != 2 * fi / (1 + fi) or abs(d - 2 * i / (1 + i)) > 1e-15
    verdict(2, mismatches == 0 and identity_failures == 0,
            f"1000 pairs, {mismatches} oracle mismatches, {identity_failures} identity failures")


def test_criterion_3_masked_attention():
    rng = np.random.default_rng(3)
    worst_full = 0.0
    leaked = 0
    for _ in range(50):
        b, nq, n, d = 2, 4, 64, 16
        P = Tensor(rng.standard_normal((b, nq, d)).astype(np.float32))
        F = Tensor(rng.standard_normal((b, n, d)).astype(np.float32))
        W = [Tensor((rng.standard_normal((d, d)) / np.sqrt(d)).astype(np.float32)) for _ in range(3)]
        upd_plain, w_plain = cross_attention(P, F, *W)
        out_full, w_full = refine_queries(P, F, np.ones((b, nq, n), np.uint8), *W)
        worst_full = max(worst_full, float(np.abs(w_full.data - w_plain.data).max()),
                         float(np.abs(out_full.data - (P.data + upd_plain.data)).max()))
        Z = (rng.random((b, nq, n)) < 0.3).astype(np.uint8)
        Z[..., 0] = 1
        _, w = refine_queries(P, F, Z, *W)
        leaked += int(np.count_nonzero(w.data[Z == 0]))
    verdict(3, worst_full <= 1e-6 and leaked == 0,
            f"all-foreground max diff {worst_full:.1e}, {leaked} nonzero weights on masked positions")


@pytest.mark.slow
def test_criterion_4_overfit(overfit_artifact):
    cfg = overfit_artifact["model"].config
    assert (cfg.image_size, cfg.embed_dim, cfg.num_layers, cfg.iterations, cfg.num_queries) == ((64, 64), 32, 2, 3, 4)
    assert overfit_artifact["state"].step == 500
    _, train_dsc = validate(overfit_artifact["model"], overfit_artifact["samples"])
    seconds = overfit_artifact["seconds"]
    verdict(4, train_dsc >= 0.90 and seconds < 600,
            f"train DSC {train_dsc:.4f} after 500 steps on 8 phantoms, {seconds:.0f} s")


@pytest.mark.slow
def test_criterion_5_two_phase_contract(tmp_path):
    samples = phantom_set(PhantomConfig(), 64, seed=42, prefix="pre")
    model = SSMTNet(ModelConfig(), seed=42)
    frozen = [g for g in GROUPS if g not in PRETRAIN_GROUPS]
    before_hash = parameter_hash(model.group_parameters(frozen))
    before_loss = reconstruction_error(model, samples)
    state = run_pretrain(model, samples, PhaseConfig(phase="pretrain", epochs=1000, max_steps=200, batch_size=8,
                                                     seed=42, checkpoint_every=0, out_dir=str(tmp_path)))
    after_loss = reconstruction_error(model, samples)
    unchanged = parameter_hash(model.group_parameters(frozen)) == before_hash
    ratio = before_loss / after_loss
    verdict(5, state.step == 200 and unchanged and ratio >= 5.0,
            f"non-pretrained groups {'unchanged' if unchanged else 'CHANGED'}, Charbonnier "
            f"{before_loss:.4f} -> {after_loss:.4f} ({ratio:.2f}x)")


@pytest.mark.slow
def test_criterion_6_semi_supervision():
    train = phantom_set(PhantomConfig(), 64, seed=42, prefix="train")
    val = phantom_set(PhantomConfig(), 16, seed=4242, prefix="val")
    phase2 = dict(epochs=1000, max_steps=300, batch_size=8, checkpoint_every=0)
    scores = {"pretrained": [], "scratch": []}
    for seed in (42, 43, 44):
        for arm in scores:
            model = SSMTNet(ModelConfig(), seed=seed)
            if arm == "pretrained":
                run_pretrain(model, train, PhaseConfig(phase="pretrain", epochs=1000, max_steps=200,
                                                       batch_size=8, seed=seed, checkpoint_every=0))
            run_supervised(model, train, PhaseConfig(seed=seed, **phase2))
            scores[arm].append(validate(model, val)[1])
    pre, scratch = float(np.mean(scores["pretrained"])), float(np.mean(scores["scratch"]))
    verdict(6, pre >= scratch - 0.005,
            f"mean val DSC pretrained {100 * pre:.2f} vs scratch {100 * scratch:.2f} "
            f"(per seed {[round(100 * s, 2) for s in scores['pretrained']]} / "
            f"{[round(100 * s, 2) for s in scores['scratch']]})")


@pytest.mark.slow
def test_criterion_7_ablation_machinery(tmp_path):
    samples = phantom_set(PhantomConfig(), 8, seed=42, prefix="abl")
    expected = {1: {"loss_nodule"}, 2: {"loss_nodule", "loss_rec"},
                3: {"loss_nodule", "loss_rec", "loss_gland"}, 4: {"loss_nodule", "loss_rec", "loss_size"},
                5: {"loss_nodule", "loss_gland", "loss_size", "loss_rec"}}
    terms = ("loss_nodule", "loss_gland", "loss_size", "loss_rec")
    problems = []
    rows5 = []
    for number in range(1, 6):
        out = tmp_path / f"v{number}"
        run_supervised(SSMTNet(ModelConfig(), seed=42), samples,
                       PhaseConfig(epochs=3, batch_size=4, seed=42, checkpoint_every=0, out_dir=str(out)),
                       flags=AblationFlags.variant(number))
        with open(out / "metrics_supervised.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        logged = {k for k in terms if rows[0][k] != ""}
        if logged != expected[number]:
            problems.append(f"variant {number} logged {sorted(logged)}")
        if number == 5:
            rows5 = rows
    w = LossWeights()
    assert (w.alpha, w.beta, w.gamma, w.eta) == (0.8, 0.1, 0.05, 0.05)
    worst = 0.0
    for row in rows5:
        recomposed = (w.alpha * float(row["loss_nodule"]) + w.beta * float(row["loss_gland"])
                      + w.gamma * float(row["loss_size"]) + w.eta * float(row["loss_rec"]))
        worst = max(worst, abs(recomposed - float(row["loss_total"])))
    if worst > 1e-5:
        problems.append(f"variant 5 total differs from 0.8/0.1/0.05/0.05 recomposition by {worst:.1e}")
    verdict(7, not problems and len(rows5) == 3,
            "; ".join(problems) or f"variants 1-5 ran, variant 5 recomposition max diff {worst:.1e}")


def _cli_run(workdir, config_path) -> None:
    for argv in (["synth-gen", "--out", "data", "--count", "16", "--unlabeled", "4", "--config", str(config_path)],
                 ["pretrain", "--config", str(config_path), "--data", "data", "--out", "runs"],
                 ["train", "--config", str(config_path), "--data", "data", "--out", "runs",
                  "--init", "runs/last_pretrain.ckpt"]):
        res = subprocess.run([sys.executable, "-m", "ssmtnet.cli", *argv], cwd=workdir,
                             capture_output=True, text=True)
        assert res.returncode == 0, res.stderr


@pytest.mark.slow
def test_criterion_8_determinism(tmp_path):
    config = {"train": {"seed": 42, "pretrain": {"epochs": 20, "batch_size": 8},
                        "supervised": {"epochs": 20, "batch_size": 8, "eval_every": 10}}}
    path = tmp_path / "desk.json"
    path.write_text(json.dumps(config))
    runs = []
    for name in ("first", "second"):
        (tmp_path / name).mkdir()
        _cli_run(tmp_path / name, path)
        runs.append(tmp_path / name / "runs")
    files = sorted(p.name for p in runs[0].iterdir() if p.suffix in (".csv", ".ckpt"))
    differing = [f for f in files if (runs[0] / f).read_bytes() != (runs[1] / f).read_bytes()]
    needed = {"metrics_pretrain.csv", "metrics_supervised.csv", "last_pretrain.ckpt", "last_supervised.ckpt"}
    verdict(8, needed <= set(files) and not differing,
            f"{len(files)} CSV/checkpoint files compared, {len(differing)} differ {differing or ''}".rstrip())


def test_criterion_9_full_scale_results_not_reproduced():
    line = ("criterion 9: NOT REPRODUCIBLE AT DESK SCALE - the reported real-data benchmark scores and "
            "absolute ablation numbers need full-size backbones trained on clinical images; "
            "criteria 1-8 substitute for them")
    ACCEPTANCE_LINES.append(line)
    print(line)
