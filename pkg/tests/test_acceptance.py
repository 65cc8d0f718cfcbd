"""Acceptance criteria 1-10 at their stated tolerances.

Each ``criterion_N`` returns ``(passed, detail)``; the pytest wrappers assert
on it and a terminal-summary hook (``conftest.py``) prints one line per
criterion. Run ``python tests/test_acceptance.py`` to get the same lines
without pytest.
"""

import sys
import time

import numpy as np
import pytest

from chanlab.channel_model import (
    CovarianceSpec,
    ObservationModel,
    Rapp,
    SampleSet,
    gen_dataset,
    make_rng,
)
from chanlab.estimators import (
    AffineEstimator,
    dl_er_mse_diag,
    empirical_mse,
    lm_er_mse_diag,
    lmmse_estimate,
    lmmse_mse_theory,
    ls_estimate,
    ls_mse_theory,
    mmse_monte_carlo,
    mmse_rapp_semianalytic,
)
from chanlab.harness.config import parse_config
from chanlab.harness.experiments import format_results, mismatch_datasets, run_experiment
from chanlab.piecewise import region_occupancy, verify_local_linearity
from chanlab.relu_net import (
    MlpParams,
    MlpSpec,
    TrainConfig,
    affine_to_relu,
    closed_form_affine_fit,
    dataset_loss,
    extend_depth_identity,
    forward,
    loss_and_gradient,
    train,
)

RESULTS = {}
DIAG1 = CovarianceSpec.diagonal(1.0)


def _mse(pred, h):
    return float(np.mean(np.sum((pred - h) ** 2, axis=1)))


def _rows(cfg_overrides):
    rows = run_experiment(parse_config(overrides=cfg_overrides))
    return {(r.sweep_var, r.estimator): r for r in rows}


def _record(n, budget, fn):
    start = time.perf_counter()
    ok, detail = fn()
    elapsed = time.perf_counter() - start
    in_time = elapsed < budget
    passed = ok and in_time
    RESULTS[n] = (passed, f"{detail}; {elapsed:.1f}s (limit {budget:.0f}s){'' if in_time else ' OVER BUDGET'}")
    return passed, RESULTS[n][1]


# ---------------------------------------------------------------------------


def criterion_1():
    """LS/LMMSE closed forms vs Monte Carlo, 3% at 10^5 samples."""
    worst = 0.0
    for d in (1, 2, 4):
        for snr in (0.0, 10.0, 25.0):
            model = ObservationModel.from_snr_db(snr)
            data = gen_dataset(DIAG1, model, 10**5, d, make_rng(1, d, int(snr)))
            s = model.sigma_n2
            ls = _mse(ls_estimate(data.x), data.h) / ls_mse_theory(d, s)
            lm = _mse(lmmse_estimate(data.x, DIAG1, s), data.h) / lmmse_mse_theory(DIAG1, s, d)
            worst = max(worst, abs(ls - 1), abs(lm - 1))
    return worst <= 0.03, f"worst relative deviation {worst:.4f} (tol 0.03)"


def criterion_2():
    """Linear model SNR sweep, d=2: DL within 10% of LMMSE theory; LMMSE <= LS."""
    rows = _rows({"experiment": "linear_snr", "d": 2})
    snrs = sorted({k[0] for k in rows})
    ratios = [rows[(s, "dl")].empirical_mse / rows[(s, "dl")].theory_mse for s in snrs]
    order = all(rows[(s, "lmmse")].empirical_mse <= rows[(s, "ls")].empirical_mse for s in snrs)
    worst = max(abs(r - 1) for r in ratios)
    ok = worst <= 0.10 and order and snrs == [0, 5, 10, 15, 20, 25]
    return ok, f"DL/LMMSE-theory {['%.3f' % r for r in ratios]} (tol 0.10), LMMSE<=LS everywhere: {order}"


def criterion_3():
    """Closed-form affine fit vs brute-force least squares; convergence to LMMSE."""
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        d = int(rng.integers(1, 5))
        m = int(rng.integers(d + 2, 201))
        x = rng.standard_normal((m, d)) * rng.uniform(0.3, 3) + rng.standard_normal(d)
        h = x @ rng.standard_normal((d, d)) + 0.5 * rng.standard_normal((m, d))
        aff = closed_form_affine_fit(SampleSet(x, h))
        # oracle: explicit normal equations on [x, 1], solved by SVD-based lstsq
        A = np.hstack([x, np.ones((m, 1))])
        coef = np.linalg.lstsq(A, h, rcond=None)[0]
        worst = max(worst, np.abs(aff.weight - coef[:-1].T).max(), np.abs(aff.bias - coef[-1]).max())
    model = ObservationModel.from_snr_db(10.0)
    fit = closed_form_affine_fit(gen_dataset(DIAG1, model, 10**5, 1, make_rng(3, 1)))
    fresh = gen_dataset(DIAG1, model, 10**5, 1, make_rng(3, 2))
    ratio = _mse(fit(fresh.x), fresh.h) / lmmse_mse_theory(DIAG1, model.sigma_n2, 1)
    ok = worst <= 1e-8 and abs(ratio - 1) <= 0.02
    return ok, f"max entry-wise gap {worst:.2e} (tol 1e-8), fresh MSE / LMMSE theory {ratio:.4f} (tol 0.02)"


def criterion_4():
    """Local linearity of trained nets; exact affine/depth constructions."""
    model = ObservationModel.from_snr_db(10.0)
    worst_resid, failures = 0.0, 0
    for k in range(5):
        data = gen_dataset(DIAG1, model, 2000, 2, make_rng(4, k))
        net, _ = train(MlpSpec.uniform(2), data, TrainConfig(epochs=20, seed=100 + k))
        xs = np.random.default_rng(k).standard_normal((10**4, 2)) * 2
        for x in xs:
            ok, resid = verify_local_linearity(net, x, 1e-10)
            failures += not ok
            worst_resid = max(worst_resid, resid)
    rng = np.random.default_rng(44)
    aff = AffineEstimator(rng.standard_normal((2, 2)), rng.standard_normal(2))
    xs = rng.standard_normal((10**4, 2)) * 3
    ref = aff(xs)
    gap_aff = np.abs(forward(affine_to_relu(aff), xs) - ref).max()
    f = forward(net, xs)
    gap_deep = max(np.abs(forward(extend_depth_identity(net, extra), xs) - f).max() for extra in (1, 3))
    ok = failures == 0 and gap_aff <= 1e-12 and gap_deep <= 1e-12
    return ok, (f"linearity failures {failures}/50000, worst residual {worst_resid:.1e}; "
                f"affine_to_relu gap {gap_aff:.1e}, extend_depth gap {gap_deep:.1e} (tol 1e-12)")


def criterion_5():
    """Backprop vs central finite differences on 50 small random nets."""
    rng = np.random.default_rng(5)
    step, worst, done = 1e-5, 0.0, 0
    while done < 50:
        d = int(rng.integers(1, 5))
        widths = (d, *(int(w) for w in rng.integers(1, 9, size=rng.integers(1, 4))), d)
        params = MlpParams([(rng.standard_normal((o, i)), 0.5 * rng.standard_normal(o))
                            for i, o in zip(widths[:-1], widths[1:])])
        X = rng.standard_normal((8, d))
        a, margin = X, np.inf
        for W, b in params.layers[:-1]:
            z = a @ W.T + b
            margin = min(margin, np.abs(z).min())
            a = np.maximum(z, 0)
        if margin < 1e-3:  # finite differences are only meaningful away from kinks
            continue
        batch = SampleSet(X, rng.standard_normal((8, d)))
        _, grads = loss_and_gradient(params, batch)
        num, ana = [], []
        for (W, b), (dW, db) in zip(params.layers, grads):
            for arr, g in ((W, dW), (b, db)):
                for idx in np.ndindex(arr.shape):
                    old = arr[idx]
                    arr[idx] = old + step
                    up = dataset_loss(params, batch)
                    arr[idx] = old - step
                    down = dataset_loss(params, batch)
                    arr[idx] = old
                    num.append((up - down) / (2 * step))
                    ana.append(g[idx])
        num, ana = np.array(num), np.array(ana)
        worst = max(worst, np.abs(num - ana).max() / max(np.abs(num).max(), 1e-12))
        done += 1
    return worst <= 1e-4, f"worst relative error {worst:.2e} over 50 instances (tol 1e-4)"


def criterion_6():
    """Rapp model: DL vs LMMSE vs semi-analytic MMSE; MC vs semi-analytic oracle."""
    rows = _rows({"experiment": "nonlinear_snr", "snr_db": [0.0, 25.0]})
    dl25, lm25, mm25 = (rows[(25.0, n)].empirical_mse for n in ("dl", "lmmse", "mmse_semianalytic"))
    trio0 = [rows[(0.0, n)].empirical_mse for n in ("dl", "lmmse", "mmse_semianalytic")]
    spread0 = max(trio0) / min(trio0) - 1
    gaps = []
    for snr in (0.0, 25.0):
        model = ObservationModel.from_snr_db(snr, distortion=Rapp(1.5, 1.0))
        test = gen_dataset(DIAG1, model, 500, 1, make_rng(6, int(snr)))
        mc = mmse_monte_carlo(test.x, DIAG1, model, 10**5, make_rng(6, int(snr), 1))
        sa = mmse_rapp_semianalytic(test.x, DIAG1, model)
        gaps.append(abs(_mse(mc, test.h) / _mse(sa, test.h) - 1))
    ok = dl25 < lm25 and dl25 / mm25 - 1 <= 0.20 and spread0 <= 0.15 and max(gaps) <= 0.02
    return ok, (f"25 dB: DL {dl25:.4g} < LMMSE {lm25:.4g}: {dl25 < lm25}, DL/MMSE {dl25 / mm25:.3f} (tol 1.20); "
                f"0 dB spread {spread0:.3f} (tol 0.15); MC vs semi-analytic {max(gaps):.4f} (tol 0.02)")


def criterion_7():
    """Case I (eta=2, d=1): DL-mismatched vs the DL theory and vs LMMSE-mismatched."""
    rows = _rows({"experiment": "mismatch_snr", "d": 1, "eta": 2.0, "test_size": 20000})
    snrs = sorted({k[0] for k in rows})
    dl0 = rows[(0.0, "dl_mismatched")]
    theory_gap = abs(dl0.empirical_mse / dl0.theory_mse - 1)
    assert dl0.theory_mse == dl_er_mse_diag(1, 1.0, [1.0], 1.0)
    pair = [rows[(s, "dl_mismatched")].empirical_mse / rows[(s, "lmmse_mismatched")].empirical_mse for s in snrs]
    worst = max(abs(p - 1) for p in pair)
    ok = theory_gap <= 0.05 and worst <= 0.05
    return ok, (f"0 dB DL-mismatched vs theory {theory_gap:.4f} (tol 0.05); "
                f"DL/LMMSE-mismatched {['%.3f' % p for p in pair]} (tol 0.05)")


def _case2_network(eta, seed_stream):
    cfg = parse_config(overrides={"experiment": "mismatch_snr", "d": 1, "eta": eta})
    model, train_set, test = mismatch_datasets(cfg, eta, 25.0, make_rng(8, seed_stream, 0), make_rng(8, seed_stream, 1))
    tc = TrainConfig(learning_rate=cfg.learning_rate, lr_final=cfg.lr_final, epochs=cfg.epochs,
                     batch_size=cfg.batch_size, seed=seed_stream)
    net, _ = train(MlpSpec.uniform(1, cfg.width, cfg.hidden_layers), train_set, tc)
    return net, model, train_set, test


def criterion_8():
    """Case II (eta=0.2, d=1): DL collapse at 25 dB and empty-region fraction."""
    rows = _rows({"experiment": "mismatch_snr", "d": 1, "eta": 0.2, "snr_db": [25.0]})
    ratio = rows[(25.0, "dl_mismatched")].empirical_mse / rows[(25.0, "lmmse")].empirical_mse
    net, _, train_set, test = _case2_network(0.2, 1)
    frac_mis = region_occupancy(net, train_set, test).empty_region_fraction
    net, _, train_set, test = _case2_network(1.0, 2)
    frac_matched = region_occupancy(net, train_set, test).empty_region_fraction
    ok = ratio >= 10 and frac_mis > 0.05 and frac_matched < 0.01
    return ok, (f"DL/LMMSE-accurate at 25 dB {ratio:.3f} (need >= 10); empty-region fraction "
                f"Case II {frac_mis:.4f} (need > 0.05), matched {frac_matched:.4f} (need < 0.01)")


def criterion_9():
    """eta sweep at 0 and 25 dB."""
    rows = _rows({"experiment": "mismatch_eta", "d": 1, "snr_db": [0.0, 25.0], "test_size": 20000})
    etas = sorted({k[0] for k in rows})
    parts, ok = [], True
    for snr in ("snr0", "snr25"):
        base = rows[(1.0, f"lmmse_{snr}")].empirical_mse
        g1 = max(abs(rows[(1.0, f"{n}_{snr}")].empirical_mse / base - 1) for n in ("lmmse_mismatched", "dl_mismatched"))
        ok &= g1 <= 0.03
        parts.append(f"{snr} eta=1 gap {g1:.4f} (tol 0.03)")
        g = max(abs(rows[(e, f"lmmse_mismatched_{snr}")].empirical_mse / rows[(e, f"lmmse_mismatched_{snr}")].theory_mse
                    - 1) for e in etas if e > 1)
        assert all(rows[(e, f"lmmse_mismatched_{snr}")].theory_mse == lm_er_mse_diag(
            1, 1.0, [e - 1.0], 10 ** (-float(snr[3:]) / 10)) for e in etas)
        ok &= g <= 0.05
        parts.append(f"{snr} eta>1 LMMSE-mismatched vs theory {g:.4f} (tol 0.05)")
    low = [rows[(e, "dl_mismatched_snr25")].empirical_mse / rows[(e, "lmmse_mismatched_snr25")].empirical_mse
           for e in etas if e < 1]
    ok &= min(low) >= 3
    parts.append(f"snr25 eta<1 DL/LMMSE-mismatched {['%.3f' % r for r in low]} (need >= 3)")
    return bool(ok), "; ".join(parts)


def criterion_10():
    """Byte-identical CSVs on rerun, for every experiment, thread count varied."""
    small = {"train_size": 300, "test_size": 200, "epochs": 3, "snr_db": [0.0, 20.0], "widths": [2, 8],
             "sizes": [50, 300], "eta_grid": [0.5, 2.0], "mc_trials": 5000, "mc_test_size": 50, "seeds": 2}
    same = []
    for exp in ("linear_snr", "width_sweep", "trainsize_sweep", "nonlinear_snr", "mismatch_snr", "mismatch_eta"):
        a = format_results(run_experiment(parse_config(overrides={"experiment": exp, **small, "threads": 1})))
        b = format_results(run_experiment(parse_config(overrides={"experiment": exp, **small, "threads": 3})))
        same.append(a.encode() == b.encode())
    return all(same), f"byte-identical reruns {sum(same)}/6 experiments"


BUDGETS = {1: 10, 2: 600, 3: 30, 4: 60, 5: 30, 6: 900, 7: 600, 8: 600, 9: 1200, 10: 600}
CRITERIA = {n: globals()[f"criterion_{n}"] for n in BUDGETS}


@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_criterion(n):
    passed, detail = _record(n, BUDGETS[n], CRITERIA[n])
    assert passed, f"criterion {n}: {detail}"


def main():
    ok = True
    for n in sorted(CRITERIA):
        passed, detail = _record(n, BUDGETS[n], CRITERIA[n])
        print(f"criterion {n}: {'PASS' if passed else 'FAIL'} - {detail}", flush=True)
        ok &= passed
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
