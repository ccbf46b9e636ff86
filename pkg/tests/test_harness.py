import json
import math

import numpy as np
import pytest

from restorer_guidance.config import resolve
from restorer_guidance.errors import ConfigError, InvalidArgumentError, TrialFailure
from restorer_guidance.harness import (
    ABLATION_GRID,
    CSV_HEADER,
    MetricsReport,
    RestorerSpec,
    degraded_inputs,
    experiment_from_values,
    make_corpus,
    run_ablation,
    run_control,
    run_experiment,
    run_ood_study,
)
from restorer_guidance.numerics import checksum, read_grd
from restorer_guidance.score_models import GmmPrior

FAST = ["sampler.steps=20", "prior.train_count=100", "experiment.trials=3"]


def exp(*overrides, out=None):
    merged = dict(item.split("=", 1) for item in FAST + list(overrides))
    return experiment_from_values(resolve(None, [f"{k}={v}" for k, v in merged.items()]), out)


def test_corpus_deterministic_and_bounded():
    a = make_corpus("smooth-blobs", 3, 32, 5)
    b = make_corpus("smooth-blobs", 3, 32, 5)
    assert [checksum(x) for x in a] == [checksum(x) for x in b]
    assert all(x.shape == (32, 32) and x.min() >= 0 and x.max() <= 1 for x in a)
    boards = make_corpus("checkerboards", 2, 16, 0)
    assert all(len(np.unique(x)) == 2 for x in boards)
    assert make_corpus("checkerboards", 0, 16, 0) == []


@pytest.mark.parametrize("kind,size", [("noise", 32), ("smooth-blobs", 8), ("checkerboards", 15)])
def test_corpus_rejects_bad_arguments(kind, size):
    with pytest.raises(InvalidArgumentError):
        make_corpus(kind, 2, size, 0)


def test_gmm_draws_match_generator():
    prior = GmmPrior(np.ones(1), np.zeros((1, 4)), np.full((1, 4), 2.0))
    draws = np.stack(make_corpus("gmm-draws", 4000, 4, 3, gmm=prior))
    se = math.sqrt(2.0 / 4000)
    assert np.all(np.abs(draws.mean(axis=0)) < 3 * se)
    assert np.allclose(draws.var(axis=0), 2.0, rtol=0.1)


def test_identity_prototype_is_exact():
    cfg = exp("task.family=identity", "task.noise_std=0", "restorer.kind=identity")
    report = run_experiment(cfg)
    protos = [r for r in report.rows if r["sampler"] == "prototype"]
    assert len(protos) == 3 and all(math.isinf(r["psnr"]) and r["ssim"] == pytest.approx(1.0) for r in protos)


def test_experiment_reproducible_and_writes_images(tmp_path):
    a = run_experiment(exp(out=tmp_path / "a"))
    b = run_experiment(exp(out=tmp_path / "b"))
    assert a.to_csv(timing=False) == b.to_csv(timing=False)
    imgs = tmp_path / "a" / "images"
    clean = make_corpus("smooth-blobs", 1, 32, 2)[0]
    assert np.array_equal(read_grd(imgs / "trial000_clean.grd"), clean)
    assert (imgs / "trial002_blur_bayesian_rt0_mb0.pgm").exists()
    assert MetricsReport.load(tmp_path / "a").to_csv() == a.to_csv()


def test_trial_failure_carries_index():
    cfg = exp()

    class Flaky:
        calls = 0

        def evaluate(self, x, t):
            Flaky.calls += 1
            if Flaky.calls > 20:
                raise FloatingPointError("boom")
            return -x

    with pytest.raises(TrialFailure) as info:
        run_experiment(cfg, model=Flaky())
    assert info.value.index == 1
    assert isinstance(info.value.cause, FloatingPointError)


def test_ablation_grid_order_and_shared_inputs():
    cfg = exp("experiment.trials=2")
    report = run_ablation(cfg)
    keys = list(report.aggregates())
    assert keys[0][1] == "prototype"
    assert [(k[2], k[3]) for k in keys[1:]] == [(int(rt), int(mb)) for rt, mb in ABLATION_GRID]
    assert all(agg["n"] == 2 for agg in report.aggregates().values())
    first = [checksum(y) for y in degraded_inputs(cfg)[1]]
    again = [checksum(y) for y in degraded_inputs(cfg.with_(sampler=cfg.sampler.with_(restorer_traveling=True)))[1]]
    assert first == again


def test_report_round_trip_and_tamper_detection(tmp_path):
    report = run_experiment(exp(out=tmp_path))
    text = (tmp_path / "report.csv").read_text()
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    assert MetricsReport.from_csv(text).rows == report.rows
    summary = json.loads((tmp_path / "summary.json").read_text())
    summary["aggregates"][0]["psnr_mean"] += 1e-9
    (tmp_path / "summary.json").write_text(json.dumps(summary))
    with pytest.raises(InvalidArgumentError):
        MetricsReport.load(tmp_path)


def test_mean_psnr_filters():
    report = MetricsReport(
        [
            {"trial": 0, "task": "a", "sampler": "s", "rt": 0, "mb": 0, "psnr": 10.0, "ssim": 0.5, "seconds": 0.0},
            {"trial": 0, "task": "a", "sampler": "t", "rt": 1, "mb": 0, "psnr": 20.0, "ssim": 0.5, "seconds": 0.0},
        ]
    )
    assert report.mean_psnr() == 15.0
    assert report.mean_psnr(rt=True) == 20.0
    with pytest.raises(InvalidArgumentError):
        report.mean_psnr(task="b")


def test_ood_identical_specs_coincide():
    cfg = exp("experiment.trials=2")
    report = run_ood_study(cfg, cfg.restorer)
    def psnrs(tag):
        return [r["psnr"] for r in report.rows if r["task"] == tag]
    assert psnrs("matched") == psnrs("mismatched")


def test_ood_mismatch_lowers_prototype_but_guidance_still_helps():
    cfg = exp("experiment.trials=4", "sampler.steps=100")
    mismatched = RestorerSpec(built_for=cfg.task.with_(blur_len=3))
    report = run_ood_study(cfg, mismatched)
    gain = {
        tag: report.mean_psnr(task=tag, sampler="bayesian") - report.mean_psnr(task=tag, sampler="prototype")
        for tag in ("matched", "mismatched")
    }
    assert report.mean_psnr(task="matched", sampler="prototype") > report.mean_psnr(task="mismatched", sampler="prototype")
    assert gain["matched"] >= 0 and gain["mismatched"] >= 0


def test_nullspace_close_to_bayesian_on_toy_deblur():
    bayes = run_experiment(exp("experiment.trials=4", "sampler.steps=100", "guidance.rho=0.45"))
    null = run_experiment(
        exp("experiment.trials=4", "sampler.steps=100", "sampler.variant=nullspace", "nullspace.sigma=0.8")
    )
    assert abs(bayes.mean_psnr(sampler="bayesian") - null.mean_psnr(sampler="nullspace")) < 0.5


def test_control_writes_strip(tmp_path):
    cfg = exp("sampler.steps=10", out=tmp_path)
    result = run_control(cfg, (0.0, 0.3, 1.0), item=1)
    assert result.monotone() and result.metric[0] > result.metric[-1]
    assert {"clean.grd", "rho_0.grd", "rho_0.3.grd", "rho_1.grd", "strip.pgm", "control.csv"} <= {p.name for p in tmp_path.iterdir()}


def test_config_errors_surface():
    with pytest.raises(ConfigError):
        exp("experiment.trials=0")
    with pytest.raises(ConfigError):
        exp("prior.source=net", "prior.path=/nonexistent")
    with pytest.raises(ConfigError):
        exp("task.blur_len=0")
