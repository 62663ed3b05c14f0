"""
Experiment script: run the acceptance experiments and print a summary per criterion.

Usage:
    python run_experiments.py [criterion ...] [--full]

Arguments:
    criterion  - Any of: batch, backlog, errors, latency, coding (default: all).
    --full     - Full scale (100 seeds per batch cell, 10^6-slot backlog runs, ...).
                 Without it every experiment runs at a quick scale.

Steps:
    1. batch   - Batches of n in {10^3, 10^4} at kappa in {16, 64}; all delivered by
                 4 kappa + n(1 + 10/kappa) in >= 99% of seeds, zero failed potential bounds.
    2. backlog - kappa = 64, w = 16 kappa^2, smooth schedule; sampled backlog never above 2w.
    3. errors  - kappa = 256 smooth schedule; error-epoch fraction below 10^-3.
    4. latency - kappa = 64, w = 65536; max latency and its ratio to w sqrt(kappa) ln^3 w,
                 nothing censored once arrivals stop 2w slots before the horizon.
    5. coding  - 10^4 random-mode epoch matrices over GF(2^8); exact round trips and a
                 singularity rate within 3 sigma of the prediction.
"""

import logging
import math
import sys

from coded_backoff.models import build_run_config
from coded_backoff.services import adversary, simcore
from coded_backoff.services.seeding import mix_seed

# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------
CRITERIA = ("batch", "backlog", "errors", "latency", "coding")

# 1 - 5/ln(kappa) is negative at kappa = 64; these runs use an explicit window rate
BACKLOG_RATE = 0.7979

QUICK = {
    "batch_seeds": 5,
    "backlog_seeds": 2,
    "backlog_horizon": 200_000,
    "error_horizon": 100_000,
    "latency_seeds": 1,
    "latency_horizon": 600_000,
    "coding_trials": 2_000,
}
FULL = {
    "batch_seeds": 100,
    "backlog_seeds": 20,
    "backlog_horizon": 1_000_000,
    "error_horizon": 1_200_000,
    "latency_seeds": 10,
    "latency_horizon": 5_000_000,
    "coding_trials": 10_000,
}


def run_batch(scale: dict) -> bool:
    ok = True
    for kappa in (16, 64):
        for n in (1_000, 10_000):
            grid = simcore.build_grid(
                {"kappa": kappa, "schedule": {"kind": "batch", "n": n}, "strict_lemmas": True},
                seeds=list(range(1, scale["batch_seeds"] + 1)),
            )
            reports = simcore.sweep(grid)
            on_time = sum(
                1 for r in reports
                if r.error is None and r.all_delivered and r.completion_slot <= r.batch_bound
            )
            failed = [r for r in reports if r.error]
            needed = math.ceil(0.99 * len(reports))
            cell_ok = on_time >= needed and not failed
            ok &= cell_ok
            worst = max((r.completion_slot or 0) for r in reports)
            print(f"  kappa={kappa:<3} n={n:<6} on time {on_time}/{len(reports)}  "
                  f"worst completion {worst} (bound {reports[0].batch_bound:.0f})  "
                  f"{'ok' if cell_ok else 'FAIL'}")
            for r in failed:
                print(f"    [error] seed {r.seed}: {r.error}")
    return ok


def run_backlog(scale: dict) -> bool:
    kappa, w = 64, 16 * 64 ** 2
    ok = True
    for index in range(scale["backlog_seeds"]):
        config = build_run_config(
            kappa=kappa, horizon=scale["backlog_horizon"], seed=mix_seed(7, index), strict_lemmas=True,
            schedule={"kind": "smooth", "w": w, "rate": BACKLOG_RATE},
        )
        report = simcore.run(config)
        seed_ok = report.max_backlog <= 2 * w and report.verdict_violations == 0 and report.decoder_mismatches == 0
        ok &= seed_ok
        print(f"  seed {config.seed:<10} max backlog {report.max_backlog:<7} (2w = {2 * w})  "
              f"delivered {report.delivered}/{report.arrivals}  {'ok' if seed_ok else 'FAIL'}")
    return ok


def run_errors(scale: dict) -> bool:
    kappa = 256
    w = 16 * kappa ** 2
    config = build_run_config(
        kappa=kappa, horizon=scale["error_horizon"], seed=1, stride=64,
        schedule={"kind": "smooth", "w": w},
    )
    report = simcore.run(config)
    rate = report.error_rate
    print(f"  epochs {report.epochs}  error epochs {report.error_epochs}  fraction {rate:.2e} "
          f"(threshold 1e-3)  window rate {adversary.theorem_rate(kappa):.4f}")
    return rate < 1e-3 and report.verdict_violations == 0


def run_latency(scale: dict) -> bool:
    kappa, w = 64, 65_536
    horizon = scale["latency_horizon"]
    ok = True
    for index in range(scale["latency_seeds"]):
        seed = mix_seed(11, index)
        config = build_run_config(
            kappa=kappa, horizon=horizon, seed=seed, detect_sparse=True,
            schedule={"kind": "smooth", "w": w, "rate": BACKLOG_RATE},
        )
        # arrivals stop 2w slots early so the system can drain
        schedule = adversary.windowed_rate_schedule(w, kappa, horizon - 2 * w, seed=seed, rate=BACKLOG_RATE)
        report = simcore.Simulation(config, schedule=schedule).run()
        seed_ok = report.all_delivered
        ok &= seed_ok
        print(f"  seed {seed:<10} max latency {report.max_latency}  ratio {report.latency_ratio:.3e}  "
              f"sparse slots {report.sparse_events}  censored {report.censored}  {'ok' if seed_ok else 'FAIL'}")
    return ok


def run_coding(scale: dict) -> bool:
    stats = simcore.verify_coding(16, scale["coding_trials"], seed=1)
    z = stats.z_score if stats.z_score is not None else float("inf")
    print(f"  trials {stats.trials}  singular {stats.singular}  observed {stats.empirical_rate:.5f}  "
          f"predicted {stats.predicted_rate:.5f}  z {z:.2f}  round-trip failures {stats.roundtrip_failures}")
    return stats.roundtrip_failures == 0 and abs(z) <= 3.0


def main():
    # --- Parse arguments ------------------------------------------------
    args = sys.argv[1:]
    scale = FULL if "--full" in args else QUICK
    selected = [a for a in args if not a.startswith("--")] or list(CRITERIA)
    unknown = [a for a in selected if a not in CRITERIA]
    if unknown:
        print(f"Error: unknown criterion {', '.join(unknown)} (expected {', '.join(CRITERIA)})")
        sys.exit(1)

    logging.basicConfig(stream=sys.stderr, level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    runners = {
        "batch": run_batch,
        "backlog": run_backlog,
        "errors": run_errors,
        "latency": run_latency,
        "coding": run_coding,
    }

    # --- Run ---------------------------------------------------------------
    results = {}
    for name in selected:
        print(f"\n[{name}]")
        results[name] = runners[name](scale)

    # --- Summary ---------------------------------------------------------
    print(f"\n--- Experiment Summary ({'full' if scale is FULL else 'quick'} scale) ---")
    for name in selected:
        print(f"  {name:<8}: {'pass' if results[name] else 'FAIL'}")
    print(f"\nDone!")
    sys.exit(0 if all(results.values()) else 2)


if __name__ == "__main__":
    main()
