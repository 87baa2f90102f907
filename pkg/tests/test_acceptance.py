"""Acceptance criteria, each at its stated tolerance and runtime budget."""
import time

import numpy as np

from hfs_lab import autodiff as ad
from hfs_lab import oracle
from hfs_lab.factor_world import (CorrelationSpec, FactorSpec, FactorWorld, default_world,
                                  joint_probabilities, preset, sample_factors)
from hfs_lab.harness.cli import main as cli_main
from hfs_lab.harness.config import GridConfig, RunConfig
from hfs_lab.harness.sweep import sweep
from hfs_lab.hfs import (HfsConfig, PairSet, hfs_averaged, hfs_pairwise, hfs_soft,
                         hfs_soft_averaged, hfs_softmin, hfs_subsampled, objective,
                         subsample_rows)
from hfs_lab.metrics.report import EvalConfig, evaluate_all
from hfs_lab.metrics.scores import betavae_score, dci, factorvae_score
from hfs_lab.models import SaeModel, beta_vae_loss, kl_term, sae_loss

import pytest

from conftest import kink_free, numeric_grad, rel_err


def test_1_oracle_equivalence(criterion):
    r = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = {name: 0.0 for name in ("pairwise", "averaged", "subsampled", "softmin", "soft")}
    for t in range(200):
        b, k = int(r.integers(2, 17)), int(r.integers(2, 7))
        Z = r.normal(size=(b, k)) * r.uniform(0.2, 3.0)
        pairs = oracle.all_pairs(k)
        ps = PairSet(tuple(pairs))
        tau, tau1, tau2 = r.uniform(0.05, 2.0, size=3)
        T = oracle.tables(Z, pairs)
        rows = subsample_rows(b, k, 50, t)
        zt = ad.Tensor(Z)
        checks = {
            "pairwise": (hfs_pairwise(zt, ps).item(), oracle.pairwise(Z, pairs, precomputed=T)),
            "averaged": (hfs_averaged(zt, ps).item(), oracle.averaged(Z, pairs, precomputed=T)),
            "subsampled": (hfs_subsampled(zt, 50, seed=t).item(), oracle.subsampled(Z, rows)),
            "softmin": (hfs_softmin(zt, ps, tau).item(), oracle.softmin(Z, pairs, tau, precomputed=T)),
            "soft": (hfs_soft(zt, ps, tau1, tau2).item(),
                     oracle.soft(Z, pairs, tau1, tau2, precomputed=T)),
        }
        for name, (fast, ref) in checks.items():
            worst[name] = max(worst[name], abs(fast - ref))
    elapsed = time.perf_counter() - start
    detail = f"max abs err {max(worst.values()):.2e}, {elapsed:.1f}s"
    criterion("1 HFS oracle equivalence", max(worst.values()) <= 1e-12 and elapsed < 10, detail)


def test_2_gradient_suite(criterion):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        r = np.random.default_rng(seed)
        model = kink_free(SaeModel(5, 3, (6, 5), min_log_variance=-20.0, seed=seed), r)
        X = r.normal(size=(8, 5))
        params = model.parameters()
        Zp = ad.Parameter(r.normal(size=(7, 4)), "Z")
        pairs = PairSet.sample(4, 3, seed)
        cfg = HfsConfig(gamma=1.7, pairs=3)
        model_pairs = PairSet.sample(3, 3, seed)
        losses = {
            "hfs_pairwise": (lambda: hfs_pairwise(Zp, pairs), [Zp]),
            "sae_loss": (lambda: sae_loss(model, X, model.encode(X, seed)), params),
            "kl_term": (lambda: kl_term(model.encode(X, seed)), params),
            "objective": (lambda: objective(model, X, cfg, 0.9, rng=seed, pairs=model_pairs)[0],
                          params),
        }
        for name, (f, ps) in losses.items():
            for p in ps:
                p.grad = None
            ad.backward(f())
            analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in ps]
            numeric = numeric_grad(lambda: f().item(), [p.data for p in ps], eps=1e-5)
            worst = max(worst, max(rel_err(a, n) for a, n in zip(analytic, numeric)))
    elapsed = time.perf_counter() - start
    criterion("2 gradient suite", worst < 1e-4 and elapsed < 60,
              f"max rel err {worst:.2e} over 20 models, {elapsed:.1f}s")


def _tv(p, q):
    return 0.5 * float(np.abs(p - q).sum())


def _marginal(spec, probs, axes):
    full = probs.reshape(spec.cardinalities)
    drop = tuple(a for a in range(spec.k) if a not in axes)
    return full.sum(axis=drop).ravel()


def _empirical(spec, factors, axes):
    cards = tuple(spec.cardinalities[a] for a in axes)
    flat = np.ravel_multi_index(factors[:, list(axes)].T, cards)
    return np.bincount(flat, minlength=int(np.prod(cards))) / len(factors)


def test_3_sampler_fidelity(criterion):
    start = time.perf_counter()
    spec = default_world().spec
    worst = 0.0
    for sigma in (0.1, 0.2, 0.4, 0.7):
        corr = preset("pair1_v1", sigma)
        f = sample_factors(spec, corr, 100_000, seed=int(sigma * 100))
        probs = joint_probabilities(spec, corr)
        worst = max(worst, _tv(_empirical(spec, f, (0, 1)), _marginal(spec, probs, (0, 1))))
    # shared confounder on the default world: every correlated 2-factor joint
    conf = preset("conf_v1", 0.2)
    f = sample_factors(spec, conf, 100_000, seed=7)
    probs = joint_probabilities(spec, conf)
    for j in range(1, spec.k):
        worst = max(worst, _tv(_empirical(spec, f, (0, j)), _marginal(spec, probs, (0, j))))
    # and the complete joint of a confounded 3-factor world
    small = FactorSpec((4, 4, 4))
    corr = CorrelationSpec(confounder=0, confounder_sigma=0.2)
    f = sample_factors(small, corr, 100_000, seed=8)
    worst = max(worst, _tv(_empirical(small, f, (0, 1, 2)), joint_probabilities(small, corr)))
    elapsed = time.perf_counter() - start
    criterion("3 correlation sampler fidelity", worst < 0.02 and elapsed < 30,
              f"max TV {worst:.4f}, {elapsed:.1f}s")


def test_4_metric_gold_null(criterion):
    start = time.perf_counter()
    spec = default_world().spec
    world = FactorWorld(spec, observation_dim=spec.k, mixing_depth=0, noise_scale=0.0,
                        identity=True)
    none = CorrelationSpec()
    cfg = EvalConfig(metrics=("dci", "mig", "modularity", "sap", "betavae", "factorvae"))
    gold = evaluate_all(lambda x: x + 0.0, world, none, cfg, seed=1).scores

    def noise(x):
        return np.random.default_rng(x.shape[0] + int(1e6 * x.sum()) % 1000).normal(size=(len(x), spec.k))

    null = evaluate_all(noise, world, none, EvalConfig(metrics=("dci", "mig")), seed=1).scores
    elapsed = time.perf_counter() - start
    ok = (gold["dci_d"] > 0.95 and gold["mig"] > 0.9 and gold["modularity"] > 0.95
          and gold["sap"] > 0.8 and gold["betavae"] > 0.95 and gold["factorvae"] > 0.95
          and null["dci_d"] < 0.1 and null["mig"] < 0.05 and elapsed < 120)
    detail = ", ".join(f"{k}={v:.3f}" for k, v in sorted(gold.items()) if k in
                       ("dci_d", "mig", "modularity", "sap", "betavae", "factorvae"))
    detail += f"; null dci_d={null['dci_d']:.3f} mig={null['mig']:.3f}; {elapsed:.1f}s"
    criterion("4 metric gold/null constructions", ok, detail)


def test_5_dci_hand_cases(criterion):
    identity = dci(np.eye(5)).disentanglement
    uniform = dci(np.ones((2, 2))).disentanglement
    half = dci(np.array([[1.0, 0.0], [0.5, 0.5]])).disentanglement
    ok = identity == 1.0 and uniform == 0.0 and half == 0.5
    criterion("5 DCI-D hand-computed cases", ok, f"identity={identity}, uniform={uniform}, "
              f"[[1,0],[.5,.5]]={half}")


def test_7_degeneration_identities(criterion):
    ok = True
    for seed in range(10):
        model = SaeModel(6, 4, (8,), seed=seed)
        X = np.random.default_rng(seed).normal(size=(16, 6))
        for beta in (0.0, 1.0, 4.0):
            cfg = HfsConfig(gamma=0.0)
            total = objective(model, X, cfg, beta, rng=seed)[0]
            ref = beta_vae_loss(model, X, model.encode(X, seed), beta)
            ok &= total.data.tobytes() == ref.data.tobytes()
            if beta == 0.0:
                ok &= total.data.tobytes() == sae_loss(model, X, model.encode(X, seed)).data.tobytes()
    criterion("7 degeneration identities", ok, "bit-equal over 10 models x 3 betas")


def test_8_soft_limits(criterion):
    r = np.random.default_rng(5)
    err_soft = err_softmin = err_avg = 0.0
    for t in range(20):
        b, k = int(r.integers(3, 12)), int(r.integers(2, 5))
        # well-separated lattice points: distinct squared distances differ by >= 0.01
        Z = ad.Tensor(r.integers(0, 6, size=(b, k)) * 0.1)
        pairs = PairSet.all(k)
        hard = hfs_pairwise(Z, pairs).item()
        err_soft = max(err_soft, abs(hfs_soft(Z, pairs, 1e-4, 1e-4).item() - hard))
        err_softmin = max(err_softmin, abs(hfs_softmin(Z, pairs, 1e-4).item() - hard))
        U = ad.Tensor(r.uniform(size=(b, k)))
        tau1 = float(r.uniform(0.05, 1.0))
        err_avg = max(err_avg, abs(hfs_soft(U, pairs, tau1, 1e3).item()
                                   - hfs_soft_averaged(U, pairs, tau1).item()))
    ok = err_soft <= 1e-4 and err_softmin <= 1e-6 and err_avg <= 1e-3
    criterion("8 soft-variant limits", ok, f"soft {err_soft:.1e}, softmin {err_softmin:.1e}, "
              f"tau2 large {err_avg:.1e}")


def test_9_sweep_reproducibility(criterion, tmp_path):
    import json
    grid = {"base": {"steps": 60, "eval_every": 30, "n_train": 300, "latent_dim": 4,
                     "hidden": [16], "hfs": {"gamma": 1.0, "pairs": 3},
                     "eval": {"metrics": ["dci", "mig"], "n_train": 300, "n_test": 150,
                              "mig_samples": 300, "probe_params": {"n_estimators": 10}}},
            "axes": {"gamma": [0.0, 1.0], "seed": [0, 1]}}
    path = tmp_path / "grid.json"
    path.write_text(json.dumps(grid))
    outputs = []
    for run in ("a", "b"):
        assert cli_main(["sweep", "--config", str(path), "--out", str(tmp_path / run)]) == 0
        outputs.append((tmp_path / run / "aggregate.csv").read_bytes())
    criterion("9 sweep reproducibility", outputs[0] == outputs[1] and len(outputs[0]) > 0,
              f"{len(outputs[0])} bytes, identical={outputs[0] == outputs[1]}")


# Desk-scale study: gamma is swept on top of beta = 1 and compared with plain
# beta-VAEs over a beta grid. The gamma grid is scaled to the squared-error
# loss of 32-dim standardized observations.
STUDY_GAMMAS = (0.0, 0.1, 0.3, 1.0)
STUDY_BETAS = (1.0, 2.0, 4.0)
STUDY_SEEDS = tuple(range(6))


def _median_of(rows, metric, **setting):
    for row in rows:
        if row["metric"] == metric and all(row[k] == v for k, v in setting.items()):
            return row["median"], row["seed-count"]
    raise KeyError(metric)


@pytest.mark.slow
def test_6_desk_scale_hfs_effect(criterion, tmp_path):
    start = time.perf_counter()
    base = RunConfig(preset="pair1_v1", sigma=0.1, steps=5000, eval_every=1000,
                     eval_correlations=("no_corr",), output_dir=str(tmp_path / "runs"),
                     eval={"metrics": ["dci"], "n_train": 5000, "n_test": 2000})
    metrics = ("dci_d", "train_hfs")
    _, hfs_rows = sweep(GridConfig(base, {"gamma": list(STUDY_GAMMAS), "seed": list(STUDY_SEEDS)},
                                   aggregate_metrics=metrics), out=tmp_path / "hfs")
    _, vae_rows = sweep(GridConfig(base, {"beta": list(STUDY_BETAS), "seed": list(STUDY_SEEDS)},
                                   aggregate_metrics=metrics), out=tmp_path / "vae")
    elapsed = time.perf_counter() - start
    best_hfs = max(_median_of(hfs_rows, "dci_d@no_corr", gamma=g)[0] for g in STUDY_GAMMAS[1:])
    best_vae = max(_median_of(vae_rows, "dci_d@no_corr", beta=b)[0] for b in STUDY_BETAS)
    curve = [_median_of(hfs_rows, "train_hfs", gamma=g)[0] for g in STUDY_GAMMAS]
    run, longest = 1, 1
    for prev, cur in zip(curve, curve[1:]):
        run = run + 1 if cur < prev else 1
        longest = max(longest, run)
    counts = [row["seed-count"] for row in hfs_rows + vae_rows]
    ok = best_hfs >= best_vae and longest >= 3 and min(counts) == 6 and elapsed < 1800
    criterion("6 desk-scale HFS effect", ok,
              f"best-gamma DCI-D {best_hfs:.3f} vs best-beta {best_vae:.3f}; train hfs by gamma "
              + "/".join(f"{v:.3f}" for v in curve) + f"; {elapsed / 60:.1f} min")
