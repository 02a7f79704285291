"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` to see the summary lines.
"""

import hashlib
import json
import struct
import time

import numpy as np
import pytest

from hybridreg.cli import main
from hybridreg.config import RegistrationConfig
from hybridreg.gradcheck import THRESHOLDS, instance
from hybridreg.loss import boundary_loss, mi_loss
from hybridreg.metrics import dice, evaluate_case, hausdorff, jacobian_determinant, sdlogj
from hybridreg.nifti_io import read_any, read_nifti, write_any
from hybridreg.optimizer import register_pair
from hybridreg.resample import warp, warp_nearest
from hybridreg.synth import PhantomSpec, make_pair, make_smooth_field
from hybridreg.volume_core import DisplacementField, LabelMap, Volume, one_hot

from conftest import fd_gradient, rel_err
from nifti_oracle import build_nifti
from oracles import det_oracle, dice_oracle, hd_oracle


@pytest.fixture
def report(capsys):
    def emit(number, name, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {name}: {detail}")
        return ok
    return emit


def mean_dice(warped, fixed):
    labels = fixed.present_labels()
    return float(np.mean([dice(warped, fixed, k) for k in labels]))


def test_1_gradient_correctness(report):
    t0 = time.perf_counter()
    worst = {}
    for term in ("ssd", "mi", "boundary", "grad", "total"):
        errs = []
        for seed in range(5):
            fun, analytic, point = instance(term, size=8, seed=seed)
            errs.append(rel_err(analytic, fd_gradient(fun, point, 1e-4)))
        worst[term] = max(errs)
    elapsed = time.perf_counter() - t0
    ok = all(worst[t] < THRESHOLDS[t] for t in worst) and elapsed < 60
    detail = ", ".join(f"{t} {e:.1e}<{THRESHOLDS[t]:.0e}" for t, e in worst.items())
    assert report(1, "gradient check", ok, f"{detail}; {elapsed:.1f}s (<60s)")


@pytest.fixture(scope="module")
def recovery():
    spec = PhantomSpec(dims=(48, 48, 48), num_blobs=5, seed=0)
    gt = make_smooth_field(spec.dims, 3.0, 6.0, seed=0)
    moving, fixed, ml, fl = make_pair(spec, gt)
    t0 = time.perf_counter()
    _, full, _ = register_pair(moving, fixed, ml, fl, RegistrationConfig())
    return gt, moving, fixed, ml, fl, full, time.perf_counter() - t0


def test_2_synthetic_recovery(report, recovery):
    gt, moving, fixed, ml, fl, full, elapsed = recovery
    fg = fl.labels > 0
    epe = float(np.linalg.norm(full.components - gt.field.components, axis=0)[fg].mean())
    pre = mean_dice(ml, fl)
    post = mean_dice(warp_nearest(ml, full), fl)
    sd, folded = sdlogj(full)
    ok = epe < 1.0 and post >= 0.90 and post > pre and sd < 0.2 and folded == 0 \
        and elapsed < 600
    assert report(2, "synthetic recovery", ok,
                  f"EPE {epe:.3f} (<1), Dice {pre:.3f}->{post:.3f} (>=0.90), "
                  f"sdlogj {sd:.3f} (<0.2), folded {folded:.4f} (=0), {elapsed:.0f}s")


def test_3_ablation_direction(report):
    full_cfg = RegistrationConfig()
    ssd_cfg = RegistrationConfig(terms=("intensity",))
    scores = {"full": [], "ssd": []}
    hd = {"full": [], "ssd": []}
    for seed in range(10):
        spec = PhantomSpec(dims=(48, 48, 48), num_blobs=5, seed=seed)
        gt = make_smooth_field(spec.dims, 3.0, 6.0, seed=seed)
        moving, fixed, ml, fl = make_pair(spec, gt)
        for name, cfg in (("full", full_cfg), ("ssd", ssd_cfg)):
            labels = (ml, fl) if name == "full" else (None, None)
            _, psi, _ = register_pair(moving, fixed, *labels, cfg)
            r = evaluate_case(warp_nearest(ml, psi), fl, percentile=95)
            scores[name].append(r.dice_mean)
            hd[name].append(r.hd_mean)
    d_full, d_ssd = np.mean(scores["full"]), np.mean(scores["ssd"])
    h_full, h_ssd = np.mean(hd["full"]), np.mean(hd["ssd"])
    ok = d_full >= d_ssd and h_full <= h_ssd
    assert report(3, "ablation direction", ok,
                  f"Dice full {d_full:.4f} >= ssd {d_ssd:.4f}; "
                  f"HD95 full {h_full:.3f} <= ssd {h_ssd:.3f} (10 seeds)")


def test_4_metric_oracles(report):
    from scipy.ndimage import gaussian_filter
    rng = np.random.default_rng(2024)
    dice_ok = hd_ok = True
    det_err = 0.0
    for _ in range(20):
        a, b = rng.integers(0, 3, (6, 6, 6)), rng.integers(0, 3, (6, 6, 6))
        la, lb = LabelMap(a), LabelMap(b)
        for label in (1, 2):
            dice_ok &= dice(la, lb, label) == dice_oracle(a, b, label)
            for pct in (95, 100):
                hd_ok &= hausdorff(la, lb, label, percentile=pct) == \
                    hd_oracle(a, b, label, percentile=pct)
        u = np.stack([gaussian_filter(rng.normal(size=(6, 6, 6)), 1.0) for _ in range(3)])
        det = jacobian_determinant(DisplacementField(u)).data
        det_err = max(det_err, float(np.abs(det - det_oracle(u)).max()))
    ok = dice_ok and hd_ok and det_err <= 1e-10
    assert report(4, "metric oracles", ok,
                  f"dice exact {dice_ok}, HD exact {hd_ok}, det max err {det_err:.1e} (<=1e-10)")


def test_5_sign_conventions(report):
    rng = np.random.default_rng(5)
    v = Volume(rng.random((6, 6, 6)))
    checks = {}
    checks["warp(zero) identity"] = np.array_equal(
        warp(v, DisplacementField.zeros(v.dims)).data, v.data)
    checks["sdlogj(zero)=0"] = sdlogj(DisplacementField.zeros((6, 6, 6)))[0] == 0
    x = np.indices((6, 6, 6), dtype=float)
    checks["sdlogj(scale)=0"] = sdlogj(DisplacementField(0.1 * x))[0] < 1e-12
    const = Volume(np.full((6, 6, 6), 0.3))
    checks["MI(const,const)=0"] = abs(mi_loss(const, const)[0]) < 1e-12
    s = one_hot(LabelMap(rng.integers(0, 3, (16, 16, 16)), 3))
    b = boundary_loss(s, s)[0]
    checks["boundary(identical)<=1e-9"] = b <= 1e-9
    ok = all(checks.values())
    failed = [k for k, c in checks.items() if not c]
    assert report(5, "sign/convention suite", ok,
                  f"{len(checks) - len(failed)}/{len(checks)} hold"
                  + (f"; failed {failed}" if failed else f"; boundary {b:.1e}"))


def test_6_io_fidelity(report, tmp_path):
    rng = np.random.default_rng(6)
    ok = True
    for i in range(10):
        dims = tuple(int(d) for d in rng.integers(1, 9, 3))
        data = rng.normal(size=dims).astype(np.float32)
        v = Volume(data, tuple(rng.uniform(0.5, 3, 3)))
        for ext in ("nii", "json"):
            p = tmp_path / f"v{i}.{ext}"
            write_any(v, p)
            back = read_any(p)
            ok &= back.data.astype(np.float32).tobytes() == data.tobytes()
            ok &= np.allclose(back.spacing, v.spacing, atol=1e-5)
    vals = rng.random(60).astype(np.float32)
    (tmp_path / "be.nii").write_bytes(build_nifti(vals, (3, 4, 5), ">"))
    swapped = read_nifti(tmp_path / "be.nii")
    header_big = struct.unpack_from(">i", (tmp_path / "be.nii").read_bytes(), 0)[0] == 348
    ok &= header_big and swapped.ravel().astype(np.float32).tobytes() == vals.tobytes()
    assert report(6, "I/O fidelity", ok, "10 volumes x (NIfTI, raw) + big-endian header read")


def test_7_determinism(report, tmp_path):
    d = tmp_path / "data"
    (tmp_path / "spec.json").write_text(json.dumps({"dims": [24, 24, 24], "num_blobs": 4,
                                                    "max_magnitude": 2.0, "seed": 1}))
    assert main(["synth", "--spec", str(tmp_path / "spec.json"), "--out-dir", str(d)]) == 0
    hashes = []
    for run in ("a", "b"):
        out = tmp_path / run / "field.nii"
        code = main(["--threads", "1", "register", "--moving", str(d / "moving.nii"),
                     "--fixed", str(d / "fixed.nii"), "--moving-labels",
                     str(d / "moving_labels.nii"), "--fixed-labels", str(d / "fixed_labels.nii"),
                     "--out-field", str(out), "--seed", "0", "--steps", "30", "20", "10"])
        assert code == 0
        hashes.append([hashlib.sha256(p.read_bytes()).hexdigest()
                       for p in (out, tmp_path / run / "field_half.nii")])
    ok = hashes[0] == hashes[1]
    assert report(7, "determinism", ok, f"field sha256 {hashes[0][0][:16]} (both runs)")
