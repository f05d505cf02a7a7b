"""
Benchmark suites: training cost against N, accuracy against N and against n,
and recovery of output correlations.

Every suite takes an ExperimentConfig and returns a BenchReport whose rows carry
the seed and a hash of the config, so each row can be re-run on its own.
"""

import hashlib
import os
import platform
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import scipy

from famgp.core import NOISE, compute_statistics, fast_lml_and_grads, lml_and_grads, predict
from famgp.data import gen_correlated, gen_sinusoids, write_cases_csv, write_predictions_csv, write_report
from famgp.exact import exact_fit, exact_lml_and_grads, exact_mo_fit_predict, exact_predict
from famgp.exceptions import SizeGuardError
from famgp.kernels import eigenvalue_mass, make_basis
from famgp.models import (
    BenchCase,
    BenchReport,
    ExperimentConfig,
    InputTransform,
    KernelKind,
    MercerBasis,
    MODataset,
)
from famgp.multioutput import mo_fit, mo_predict
from famgp.registry import ExperimentRegistry
from famgp.training import (
    default_params,
    train,
    train_exact,
    train_exact_multioutput,
    train_fast_path,
    train_multioutput,
)
from famgp.utils import logger

SE = KernelKind.SQUARED_EXPONENTIAL
PERIODIC = KernelKind.PERIODIC
CHEBYSHEV = KernelKind.CHEBYSHEV


def experiment(experiment_id: str):
    def decorate(function):
        function.experiment_id = experiment_id
        return function

    return decorate


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(config.model_dump_json().encode("utf-8")).hexdigest()[:16]


def environment_stamp() -> Dict[str, object]:
    return {
        "cpu_count": os.cpu_count(),
        "python": platform.python_version(),
        "platform": platform.platform(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def median_time(run: Callable[[], object], repeats: int) -> float:
    """Median wall time of ``repeats`` calls, after one untimed warm-up call."""
    run()
    timings = []
    for _ in range(repeats):
        start = time.perf_counter()
        run()
        timings.append(time.perf_counter() - start)
    return float(np.median(timings))


def loglog_slope(sizes: List[float], values: List[float]) -> Optional[float]:
    if len(sizes) < 2:
        return None
    return float(np.polyfit(np.log(sizes), np.log(values), 1)[0])


def rmse(estimate: np.ndarray, truth: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(estimate) - np.asarray(truth)) ** 2)))


def odd(n: int) -> int:
    return n if n % 2 else n + 1


def _report(name: str, config: ExperimentConfig, cases: List[BenchCase], summary: Dict) -> BenchReport:
    return BenchReport(
        experiment=name,
        cases=cases,
        environment=environment_stamp(),
        summary=summary,
        config=config.model_dump(mode="json"),
    )


def _sinusoids(config: ExperimentConfig, seed: int, N: int):
    spec = config.dataset
    return gen_sinusoids(seed, N, spec.x_range, spec.num_terms, spec.coeff_range, spec.noise_sd)


def _iteration_runner(method: str, dataset, n: int) -> Callable[[], object]:
    """One LML-and-gradient evaluation of ``method``; one-time eigenfunction builds happen here, untimed."""
    noise = float(dataset.noise_variance)
    if method == "exact":
        params = default_params(SE)
        return lambda: exact_lml_and_grads(exact_fit(dataset, SE, params), ["l_se", NOISE])
    if method == "se":
        params = default_params(SE)
        return lambda: lml_and_grads(dataset, SE, params, n, ["l_se", NOISE])
    if method == "pr":
        params = default_params(PERIODIC)
        return lambda: lml_and_grads(dataset, PERIODIC, params, odd(n), ["f_pr", "w_pr", NOISE])
    kind, names = (CHEBYSHEV, ["a", "b", NOISE]) if method == "ch" else (PERIODIC, ["w_pr", NOISE])
    params = default_params(kind)
    count = odd(n) if kind == PERIODIC else n
    frozen = MercerBasis(params=params, n=count, requested_n=count, lam=np.ones(count))
    stats = compute_statistics(dataset, frozen, InputTransform.from_data(dataset.X))
    return lambda: fast_lml_and_grads(stats, make_basis(kind, params, count), names, noise)


@experiment("scaling")
def bench_scaling(config: ExperimentConfig) -> BenchReport:
    """
    Per-iteration training cost against N for the exact GP, the eigenfunction-recomputing
    models (se, pr) and the eigenvalue-only fast path (ch, prcf).

    Each case times ``config.iterations`` gradient evaluations, median of ``config.repeats``.
    The exact GP is skipped above ``config.exact_max_n``.
    """
    methods = config.methods or ["exact", "se", "pr", "ch", "prcf"]
    digest = config_hash(config)
    cases = []
    for N in config.sizes:
        dataset = _sinusoids(config, config.seed, N).dataset
        for method in methods:
            if method == "exact" and N > config.exact_max_n:
                cases.append(BenchCase(method=method, N=N, n=0, seed=config.seed, config_hash=digest, status="skipped"))
                continue
            runner = _iteration_runner(method, dataset, config.n)

            def loop():
                for _ in range(config.iterations):
                    runner()

            seconds = median_time(loop, config.repeats) / config.iterations
            cases.append(
                BenchCase(
                    method=method,
                    N=N,
                    n=0 if method == "exact" else config.n,
                    iters=config.iterations,
                    seconds=seconds,
                    seed=config.seed,
                    config_hash=digest,
                )
            )
            logger.info(f"scaling: {method} N={N} {seconds:.3e} s/iteration")
    summary = {}
    for method in methods:
        rows = [case for case in cases if case.method == method and case.status == "ok"]
        summary[f"slope_{method}"] = loglog_slope([case.N for case in rows], [case.seconds for case in rows])
    return _report("scaling", config, cases, summary)


def _train_single(method: str, dataset, config: ExperimentConfig, n: int):
    if method == "exact":
        return train_exact(dataset, SE, default_params(SE), config.optimizer, learn_scale=True)
    if method == "ch":
        return train_fast_path(dataset, CHEBYSHEV, default_params(CHEBYSHEV), n, config.optimizer, learn_scale=True)
    if method == "prcf":
        return train_fast_path(dataset, PERIODIC, default_params(PERIODIC), odd(n), config.optimizer, learn_scale=True)
    if method == "pr":
        return train(dataset, PERIODIC, default_params(PERIODIC), odd(n), config.optimizer, learn_scale=True)
    return train(dataset, SE, default_params(SE), n, config.optimizer, learn_scale=True)


def _predict_mean(method: str, model, X: np.ndarray) -> np.ndarray:
    if method == "exact":
        return exact_predict(model, X, variance=False).mean
    return predict(model, X, variance=False).mean


def _accuracy_case(method, data, config, n, seed, digest, extra=None) -> BenchCase:
    dataset = data.dataset
    result = _train_single(method, dataset, config, n)
    estimate = _predict_mean(method, result.model, dataset.X)
    return BenchCase(
        method=method,
        N=dataset.n_samples,
        n=0 if method == "exact" else n,
        iters=result.trace.iterations,
        rmse=rmse(estimate, data.Y_true),
        params=result.params,
        seed=seed,
        config_hash=digest,
        status="ok" if result.trace.converged else "max_iters",
        extra=extra or {},
    )


@experiment("rmse-samples")
def bench_rmse_vs_samples(config: ExperimentConfig) -> BenchReport:
    """
    RMSE against the noise-free function as N grows, with n fixed, for each seed.
    The exact GP runs only up to ``config.exact_max_n``.
    """
    methods = config.methods or ["se", "ch", "exact"]
    digest = config_hash(config)
    cases = []
    for seed in config.seeds:
        for N in config.sizes:
            data = _sinusoids(config, seed, N)
            for method in methods:
                if method == "exact" and N > config.exact_max_n:
                    cases.append(BenchCase(method=method, N=N, seed=seed, config_hash=digest, status="skipped"))
                    continue
                case = _accuracy_case(method, data, config, config.n, seed, digest)
                logger.info(f"rmse-samples: {method} N={N} seed={seed} RMSE={case.rmse:.4g}")
                cases.append(case)
    summary = {}
    for method in methods:
        medians = {}
        for N in config.sizes:
            values = [case.rmse for case in cases if case.method == method and case.N == N and case.rmse is not None]
            if values:
                medians[str(N)] = float(np.median(values))
        summary[f"median_rmse_{method}"] = medians
    return _report("rmse-samples", config, cases, summary)


@experiment("rmse-eigs")
def bench_rmse_vs_eigs(config: ExperimentConfig) -> BenchReport:
    """
    RMSE and learned SE hyperparameters as the number of eigenvalues grows, with the
    exact GP as the reference line.
    """
    digest = config_hash(config)
    data = _sinusoids(config, config.seed, config.dataset.n_samples)
    cases = []
    for n in config.eig_counts:
        case = _accuracy_case("se", data, config, n, config.seed, digest)
        basis = make_basis(SE, {"l_se": case.params["l_se"]}, n)
        case.extra = {"eigenvalue_mass": eigenvalue_mass(basis)}
        logger.info(f"rmse-eigs: n={n} RMSE={case.rmse:.4g} l_se={case.params['l_se']:.4g}")
        cases.append(case)
    summary = {}
    if data.dataset.n_samples <= config.exact_max_n:
        reference = _accuracy_case("exact", data, config, 0, config.seed, digest)
        cases.append(reference)
        summary = {"exact_rmse": reference.rmse, "exact_l_se": reference.params["l_se"]}
    return _report("rmse-eigs", config, cases, summary)


def rescale_length(length: float, source: np.ndarray, target: np.ndarray) -> float:
    """Length-scale learned on inputs ``source``, in the normalized units of inputs ``target``."""
    return length * InputTransform.from_data(source).scale / InputTransform.from_data(target).scale


def split_for_prediction(dataset: MODataset, split: int, output: int = 1) -> MODataset:
    """Full data with ``output`` hidden from sample ``split`` on."""
    Y = np.array(dataset.Y)
    Y[split:, output] = np.nan
    return MODataset(X=dataset.X, Y=Y, noise_kind=dataset.noise_kind, noise=dataset.noise)


def _correlation_case(method, posterior, truth, split, K_f, l_se, seed, digest, N, n, iters, status) -> BenchCase:
    mean = posterior.mean
    correlation = float(K_f[0, 1] / np.sqrt(K_f[0, 0] * K_f[1, 1]))
    return BenchCase(
        method=method,
        N=N,
        M=2,
        n=n,
        iters=iters,
        rmse=rmse(mean[split:], truth[split:]),
        params={"l_se": l_se, "K_f": K_f.tolist()},
        seed=seed,
        config_hash=digest,
        status=status,
        extra={
            "correlation": correlation,
            "rmse_train": rmse(mean[:split], truth[:split]),
            "rmse_test": rmse(mean[split:], truth[split:]),
            "rmse_all": rmse(mean, truth),
        },
    )


def _exact_correlation_cases(config, training, observed, truth, split, seed, digest) -> List[BenchCase]:
    exact = train_exact_multioutput(training, SE, default_params(SE), None, config.optimizer)
    l_se = rescale_length(exact.params["l_se"], training.X, observed.X)
    status = "ok" if exact.trace.converged else "max_iters"
    cases = []
    for method, K_f in (("exact", exact.K_f), ("exact_identity", np.eye(2))):
        posterior = exact_mo_fit_predict(observed, SE, {"l_se": l_se}, K_f, observed.X, outputs=[1])
        write_predictions_csv(Path(config.out_dir) / f"correlation_seed{seed}_{method}.csv", observed.X, posterior)
        cases.append(
            _correlation_case(
                method, posterior, truth, split, K_f, l_se, seed, digest,
                observed.n_samples, 0, exact.trace.iterations, status,
            )
        )
    return cases


@experiment("correlation")
def bench_correlation(config: ExperimentConfig) -> BenchReport:
    """
    Learn K_f and l_se on the first part of correlated two-output data, then predict the
    second output where it is hidden, with the learned K_f and with K_f = I.

    ``rmse`` of each row is the test-region error of the second output against its
    noise-free values. Learned length-scales are carried over to the full input range,
    so ``l_se`` in each row is in the units of the full range.
    """
    spec = config.dataset
    digest = config_hash(config)
    out_dir = Path(config.out_dir)
    cases = []
    for seed in config.seeds:
        data = gen_correlated(seed, spec.n_samples, spec.l_se, spec.K_f, spec.noise_var)
        full = data.dataset
        split = int(round(config.train_fraction * full.n_samples))
        training = MODataset(X=full.X[:split], Y=full.Y[:split], noise_kind=full.noise_kind, noise=full.noise)
        observed = split_for_prediction(full, split)
        truth = data.F_true[:, 1]
        init = default_params(SE)

        result = train_multioutput(training, SE, init, config.n, None, config.optimizer)
        l_se = rescale_length(result.params["l_se"], training.X, full.X)
        status = "ok" if result.trace.converged else "max_iters"
        for method, K_f in (("famgp", result.K_f), ("famgp_identity", np.eye(2))):
            model = mo_fit(observed, SE, {"l_se": l_se}, config.n, K_f)
            posterior = mo_predict(model, full.X, outputs=[1])
            write_predictions_csv(out_dir / f"correlation_seed{seed}_{method}.csv", full.X, posterior)
            cases.append(
                _correlation_case(
                    method, posterior, truth, split, K_f, l_se, seed, digest,
                    full.n_samples, config.n, result.trace.iterations, status,
                )
            )

        if config.methods and "exact" not in config.methods:
            continue
        try:
            cases.extend(_exact_correlation_cases(config, training, observed, truth, split, seed, digest))
        except SizeGuardError as e:
            logger.warning(f"correlation: exact GP skipped: {e}")
            cases.append(BenchCase(method="exact", N=full.n_samples, M=2, seed=seed, config_hash=digest, status="skipped"))

    summary = {}
    for method in ("famgp", "exact"):
        rows = [case for case in cases if case.method == method and case.status != "skipped"]
        if rows:
            summary[f"median_correlation_{method}"] = float(np.median([case.extra["correlation"] for case in rows]))
            summary[f"median_l_se_{method}"] = float(np.median([case.params["l_se"] for case in rows]))
    learned = [case.rmse for case in cases if case.method == "famgp"]
    identity = [case.rmse for case in cases if case.method == "famgp_identity"]
    if learned:
        summary["test_rmse_ratio"] = float(np.median(identity) / np.median(learned))
    return _report("correlation", config, cases, summary)


def run_experiment(config: ExperimentConfig, render: bool = False) -> BenchReport:
    """Run the registered suite named by ``config.experiment`` and write its report and case table."""
    report = experiment_registry.get(config.experiment)(config)
    out_dir = Path(config.out_dir)
    write_report(out_dir / f"{config.experiment}_report.json", report)
    write_cases_csv(out_dir / f"{config.experiment}_cases.csv", report.cases)
    if render:
        render_report(report, out_dir / f"{config.experiment}.png")
    logger.info(f"Experiment '{config.experiment}' finished with {len(report.cases)} cases in {out_dir}")
    return report


def render_report(report: BenchReport, path: Path) -> Path:
    """Static log-log plot of seconds (or RMSE) against N (or n) per method."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    metric = "seconds" if report.experiment == "scaling" else "rmse"
    axis = "n" if report.experiment == "rmse-eigs" else "N"
    figure, ax = plt.subplots(figsize=(6, 4))
    for method in sorted({case.method for case in report.cases}):
        rows = [case for case in report.cases if case.method == method and getattr(case, metric) is not None]
        rows.sort(key=lambda case: getattr(case, axis))
        if rows:
            ax.loglog([getattr(case, axis) for case in rows], [getattr(case, metric) for case in rows], "o-", label=method)
    ax.set_xlabel(axis)
    ax.set_ylabel(metric)
    ax.legend()
    figure.tight_layout()
    figure.savefig(path)
    plt.close(figure)
    return path


experiment_registry = ExperimentRegistry()
experiment_registry.register_default()
