"""Sweep runners that regenerate the estimator-comparison curves.

Each runner splits its sweep into independent jobs; job ``k`` of replicate
``r`` draws from the random sub-stream ``(seed, k, r, purpose)`` so results
do not depend on scheduling or thread count.
"""

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from chanlab.channel_model import (
    CovarianceSpec,
    MismatchSpec,
    ObservationModel,
    Rapp,
    gen_dataset,
    gen_mismatched_dataset,
    make_rng,
)
from chanlab.estimators import (
    dl_er_mse_diag,
    empirical_mse,
    lm_er_mse_diag,
    lmmse_estimate,
    lmmse_mse_theory,
    lmmse_rapp_estimate,
    ls_estimate,
    ls_mse_theory,
    mmse_monte_carlo,
    mmse_rapp_semianalytic,
    rapp_linear_moments,
)
from chanlab.linalg import LinAlgError, right_solve
from chanlab.relu_net import MlpSpec, TrainConfig, train

log = logging.getLogger(__name__)

# sub-stream purposes
TRAIN_DATA, TEST_DATA, MC_DATA, TRAIN_SEED = 0, 1, 2, 3


class NumericalFailure(RuntimeError):
    pass


@dataclass
class SweepRow:
    sweep_var: float
    estimator: str
    empirical_mse: float
    theory_mse: Optional[float]
    seed: int


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def _mse(predict, data):
    return empirical_mse(predict, data).empirical_mse


def _train_seed(cfg, job, rep):
    return int(np.random.SeedSequence([cfg.seed, job, rep, TRAIN_SEED]).generate_state(1)[0])


def _train_dl(cfg, data, job, rep, width=None):
    spec = MlpSpec.uniform(cfg.d, cfg.width if width is None else width, cfg.hidden_layers)
    tcfg = TrainConfig(
        optimizer=cfg.optimizer,
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        epochs=cfg.epochs,
        seed=_train_seed(cfg, job, rep),
        lr_final=cfg.lr_final,
    )
    params, report = train(spec, data, tcfg)
    log.info("job %d rep %d: trained %s in %.1fs, train loss %.4g", job, rep, spec.widths, report.wall_time,
             report.final_train_loss)
    return params


def _snr_tag(snr):
    return f"snr{snr:g}"


def _run_jobs(cfg, jobs):
    """Run ``jobs[k](rep)`` for every job and replicate; average over replicates.

    Each job returns a list of ``(sweep_var, estimator, mse, theory)``.
    """
    tasks = [(k, r) for k in range(len(jobs)) for r in range(cfg.seeds)]

    def run(task):
        k, r = task
        return jobs[k](r)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            outputs = list(pool.map(run, tasks))
    else:
        outputs = [run(t) for t in tasks]

    merged = {}
    for out in outputs:
        for sweep_var, name, mse, theory in out:
            entry = merged.setdefault((float(sweep_var), name), [[], theory])
            entry[0].append(mse)
    return [
        SweepRow(sv, name, float(np.mean(vals)), theory, cfg.seed)
        for (sv, name), (vals, theory) in sorted(merged.items())
    ]


def _guard(label, fn):
    try:
        return fn()
    except (ArithmeticError, LinAlgError, FloatingPointError) as exc:
        raise NumericalFailure(f"{label}: {exc}") from exc


def _base(cfg):
    return CovarianceSpec.diagonal(cfg.sigma2)


# ---------------------------------------------------------------------------
# linear model sweeps
# ---------------------------------------------------------------------------


def run_linear_snr(cfg):
    """LS, LMMSE and DL versus SNR on the linear pilot model."""
    cov = _base(cfg)

    def job_for(k, snr):
        def job(rep):
            model = ObservationModel.from_snr_db(snr)
            train_set = gen_dataset(cov, model, cfg.train_size, cfg.d, make_rng(cfg.seed, k, rep, TRAIN_DATA))
            test = gen_dataset(cov, model, cfg.test_size, cfg.d, make_rng(cfg.seed, k, rep, TEST_DATA))
            net = _guard(f"snr={snr:g} dB", lambda: _train_dl(cfg, train_set, k, rep))
            s = model.sigma_n2
            j_lmmse = lmmse_mse_theory(cov, s, cfg.d)
            return [
                (snr, "ls", _mse(lambda x: ls_estimate(x, model.tau), test), ls_mse_theory(cfg.d, s)),
                (snr, "lmmse", _mse(lambda x: lmmse_estimate(x, cov, s, model.tau), test), j_lmmse),
                (snr, "dl", _mse(net, test), j_lmmse),
            ]

        return job

    return _run_jobs(cfg, [job_for(k, snr) for k, snr in enumerate(cfg.snr_db)])


def run_width_sweep(cfg):
    """DL MSE versus hidden width at fixed SNRs, LMMSE as the benchmark."""
    cov = _base(cfg)
    jobs = []
    for i, snr in enumerate(cfg.snr_db):
        for j, width in enumerate(cfg.widths):
            jobs.append((i, snr, width))

    def job_for(k, i, snr, width):
        def job(rep):
            model = ObservationModel.from_snr_db(snr)
            # datasets shared across widths at one SNR
            train_set = gen_dataset(cov, model, cfg.train_size, cfg.d, make_rng(cfg.seed, i, rep, TRAIN_DATA))
            test = gen_dataset(cov, model, cfg.test_size, cfg.d, make_rng(cfg.seed, i, rep, TEST_DATA))
            net = _guard(f"snr={snr:g} dB width={width}", lambda: _train_dl(cfg, train_set, k, rep, width=width))
            s = model.sigma_n2
            j_lmmse = lmmse_mse_theory(cov, s, cfg.d)
            tag = _snr_tag(snr)
            return [
                (width, f"dl_{tag}", _mse(net, test), j_lmmse),
                (width, f"lmmse_{tag}", _mse(lambda x: lmmse_estimate(x, cov, s, model.tau), test), j_lmmse),
            ]

        return job

    return _run_jobs(cfg, [job_for(k, *spec) for k, spec in enumerate(jobs)])


def run_trainsize_sweep(cfg):
    """DL MSE versus training-set size at fixed SNRs (nested training sets)."""
    cov = _base(cfg)
    biggest = max(cfg.sizes)
    jobs = [(i, snr, n) for i, snr in enumerate(cfg.snr_db) for n in cfg.sizes]

    def job_for(k, i, snr, n):
        def job(rep):
            model = ObservationModel.from_snr_db(snr)
            pool = gen_dataset(cov, model, biggest, cfg.d, make_rng(cfg.seed, i, rep, TRAIN_DATA))
            test = gen_dataset(cov, model, cfg.test_size, cfg.d, make_rng(cfg.seed, i, rep, TEST_DATA))
            net = _guard(f"snr={snr:g} dB size={n}", lambda: _train_dl(cfg, pool.subset(slice(0, n)), k, rep))
            s = model.sigma_n2
            j_lmmse = lmmse_mse_theory(cov, s, cfg.d)
            tag = _snr_tag(snr)
            return [
                (n, f"dl_{tag}", _mse(net, test), j_lmmse),
                (n, f"lmmse_{tag}", _mse(lambda x: lmmse_estimate(x, cov, s, model.tau), test), j_lmmse),
            ]

        return job

    return _run_jobs(cfg, [job_for(k, *spec) for k, spec in enumerate(jobs)])


# ---------------------------------------------------------------------------
# Rapp-distorted model
# ---------------------------------------------------------------------------


def rapp_lmmse_theory(cov, model, d):
    """MSE of the best linear estimator, ``tr R - tr C_hx C_xx^-1 C_xh``."""
    C_hx, C_xx = rapp_linear_moments(cov, model, d)
    return float(np.trace(cov.as_matrix(d)) - np.trace(right_solve(C_hx, C_xx) @ C_hx.T))


def run_nonlinear_snr(cfg):
    """MMSE (two oracles), LMMSE and DL versus SNR under Rapp distortion.

    ``lmmse`` is the best linear estimator for the distorted observation;
    ``lmmse_linear_model`` applies the undistorted-model LMMSE map to the
    distorted signal. ``mmse_mc`` runs on the first ``mc_test_size`` test
    points only.
    """
    cov = _base(cfg)
    rapp = Rapp(cfg.x_sat, cfg.omega)

    def job_for(k, snr):
        def job(rep):
            model = ObservationModel.from_snr_db(snr, distortion=rapp)
            s = model.sigma_n2
            train_set = gen_dataset(cov, model, cfg.train_size, cfg.d, make_rng(cfg.seed, k, rep, TRAIN_DATA))
            test = gen_dataset(cov, model, cfg.test_size, cfg.d, make_rng(cfg.seed, k, rep, TEST_DATA))
            net = _guard(f"snr={snr:g} dB", lambda: _train_dl(cfg, train_set, k, rep))
            mc_set = test.subset(slice(0, cfg.mc_test_size))
            mc = _guard(
                f"snr={snr:g} dB",
                lambda: mmse_monte_carlo(mc_set.x, cov, model, cfg.mc_trials, make_rng(cfg.seed, k, rep, MC_DATA)),
            )
            j_mmse = lmmse_mse_theory(cov, s, cfg.d)
            return [
                (snr, "dl", _mse(net, test), None),
                (snr, "lmmse", _mse(lambda x: lmmse_rapp_estimate(x, cov, model), test),
                 rapp_lmmse_theory(cov, model, cfg.d)),
                (snr, "lmmse_linear_model", _mse(lambda x: lmmse_estimate(x, cov, s, model.tau), test), None),
                (snr, "mmse_semianalytic", _mse(lambda x: mmse_rapp_semianalytic(x, cov, model), test), j_mmse),
                (snr, "mmse_mc", _mse(lambda x: mc, mc_set), j_mmse),
            ]

        return job

    return _run_jobs(cfg, [job_for(k, snr) for k, snr in enumerate(cfg.snr_db)])


# ---------------------------------------------------------------------------
# mismatched statistics
# ---------------------------------------------------------------------------


def mismatch_datasets(cfg, eta, snr, rng_train, rng_test):
    """Training data drawn under mismatch ``eta`` plus a deployment test set.

    ``eta >= 1`` broadens the training channels (case1, zeta variance
    ``(eta - 1) sigma2``); ``eta < 1`` narrows them (case2, training channel
    variance ``eta * sigma2`` and deployment channel ``h_er + zeta``).
    """
    model = ObservationModel.from_snr_db(snr)
    d = cfg.d
    if eta >= 1:
        cov = _base(cfg)
        zeta = CovarianceSpec.full((eta - 1.0) * cfg.sigma2 * np.eye(d))
        train_set = gen_mismatched_dataset(cov, MismatchSpec("case1", zeta), model, cfg.train_size, d, rng_train)
        test = gen_dataset(cov, model, cfg.test_size, d, rng_test)
    else:
        cov_er = CovarianceSpec.diagonal(eta * cfg.sigma2)
        zeta = CovarianceSpec.diagonal((1.0 - eta) * cfg.sigma2)
        train_set = gen_mismatched_dataset(cov_er, MismatchSpec("case2", zeta), model, cfg.train_size, d, rng_train)
        test = gen_dataset(cov_er + zeta, model, cfg.test_size, d, rng_test)
    return model, train_set, test


def _mismatch_rows(cfg, eta, snr, k, rep, sweep_var, suffix=""):
    model, train_set, test = mismatch_datasets(
        cfg, eta, snr, make_rng(cfg.seed, k, rep, TRAIN_DATA), make_rng(cfg.seed, k, rep, TEST_DATA)
    )
    d, s, sigma2 = cfg.d, model.sigma_n2, cfg.sigma2
    cov = _base(cfg)
    assumed = CovarianceSpec.diagonal(eta * sigma2)
    net = _guard(f"snr={snr:g} dB eta={eta:g}", lambda: _train_dl(cfg, train_set, k, rep))
    err_var = [(eta - 1.0) * sigma2] * d
    return [
        (sweep_var, "ls" + suffix, _mse(lambda x: ls_estimate(x, model.tau), test), ls_mse_theory(d, s)),
        (sweep_var, "lmmse" + suffix, _mse(lambda x: lmmse_estimate(x, cov, s, model.tau), test),
         lmmse_mse_theory(cov, s, d)),
        (sweep_var, "lmmse_mismatched" + suffix, _mse(lambda x: lmmse_estimate(x, assumed, s, model.tau), test),
         lm_er_mse_diag(d, sigma2, err_var, s)),
        (sweep_var, "dl_mismatched" + suffix, _mse(net, test),
         dl_er_mse_diag(d, sigma2, err_var, s) if eta >= 1 else None),
    ]


def run_mismatch_snr(cfg):
    """Accurate/mismatched LMMSE, LS and mismatch-trained DL versus SNR at fixed eta."""
    jobs = [(lambda rep, k=k, snr=snr: _mismatch_rows(cfg, cfg.eta, snr, k, rep, snr)) for k, snr in
            enumerate(cfg.snr_db)]
    return _run_jobs(cfg, jobs)


def run_mismatch_eta(cfg):
    """The same estimators versus eta at each configured SNR."""
    grid = [(snr, eta) for snr in cfg.snr_db for eta in cfg.eta_grid]
    jobs = [
        (lambda rep, k=k, snr=snr, eta=eta: _mismatch_rows(cfg, eta, snr, k, rep, eta, "_" + _snr_tag(snr)))
        for k, (snr, eta) in enumerate(grid)
    ]
    return _run_jobs(cfg, jobs)


RUNNERS = {
    "linear_snr": run_linear_snr,
    "width_sweep": run_width_sweep,
    "trainsize_sweep": run_trainsize_sweep,
    "nonlinear_snr": run_nonlinear_snr,
    "mismatch_snr": run_mismatch_snr,
    "mismatch_eta": run_mismatch_eta,
}


def run_experiment(cfg):
    return RUNNERS[cfg.experiment](cfg)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

HEADER = ["sweep_var", "estimator", "empirical_mse", "theory_mse", "seed"]


def _num(v):
    return "" if v is None else f"{v:.12g}"


def format_results(rows):
    if not rows:
        raise ValueError("nothing to write")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in sorted(rows, key=lambda r: (r.sweep_var, r.estimator)):
        w.writerow([_num(r.sweep_var), r.estimator, _num(r.empirical_mse), _num(r.theory_mse), r.seed])
    return buf.getvalue()


def write_results(rows, path):
    """Write rows as CSV sorted by (sweep_var, estimator), LF endings, 12 significant digits."""
    text = format_results(rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def read_results(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            SweepRow(
                float(r["sweep_var"]),
                r["estimator"],
                float(r["empirical_mse"]),
                float(r["theory_mse"]) if r["theory_mse"] else None,
                int(r["seed"]),
            )
            for r in reader
        ]
