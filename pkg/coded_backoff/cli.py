"""
Command-line front end.

    python main.py run --kappa 64 --schedule smooth --w 65536 --rate 0.5 --horizon 1000000 --seed 7
    python main.py batch --n 1000 --kappa 16 --strict-lemmas
    python main.py sweep --kappas 16,64 --seeds 1-100 --n 1000
    python main.py validate --trace arrivals.csv --w 65536 --kappa 64
    python main.py replay --trace slots.csv --kappa 3
    python main.py verify-coding --kappa 16 --trials 10000 --seed 1

Exit status: 0 success, 1 configuration / usage / I/O error, 2 failed lemma or invariant check.
"""
import argparse
import logging
import sys
from dataclasses import dataclass, field
from typing import Optional, Sequence

from coded_backoff.config import (
    DEFAULT_KAPPA,
    DEFAULT_PAYLOAD_LEN,
    DEFAULT_SEED,
    load_config_file,
    seed_from_env,
    seed_in_range,
)
from coded_backoff.errors import CodedBackoffError, ConfigError, InvariantError, LemmaViolationError
from coded_backoff.models import RunConfig, build_run_config

logger = logging.getLogger(__name__)

VERBS = ("run", "batch", "sweep", "validate", "replay", "verify-coding")
RUN_VERBS = ("run", "batch", "sweep")
DEFAULT_TRIALS = 10_000

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CHECK_FAILED = 2


class UsageError(ConfigError):
    """Bad command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class Command:
    verb: str
    config: Optional[RunConfig] = None
    options: dict = field(default_factory=dict)
    out: Optional[str] = None
    format: str = "human"
    verbosity: int = 0


def _int_list(raw: str) -> list[int]:
    """Comma list of non-negative integers; `a-b` expands to the inclusive range."""
    values = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        low, _, high = part.partition("-")
        try:
            values.extend(range(int(low), int(high) + 1) if high else [int(low)])
        except ValueError:
            raise argparse.ArgumentTypeError(f"not an integer list: '{raw}'") from None
    return values


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--kappa", type=int, help=f"decoding threshold (default {DEFAULT_KAPPA})")
    parser.add_argument("--seed", type=int, help=f"run seed (default {DEFAULT_SEED}, or $CODED_BACKOFF_SEED)")
    parser.add_argument("--out", help="write the JSONL record stream to this path")
    parser.add_argument("--format", choices=("human", "csv", "jsonl"), help="stdout report format")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug (stderr)")


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--horizon", type=int, help="slots to simulate")
    parser.add_argument("--schedule", choices=("batch", "smooth", "bursts", "spread", "trace"))
    parser.add_argument("--n", type=int, help="batch size")
    parser.add_argument("--w", type=int, help="adversary window (>= 16 kappa^2)")
    parser.add_argument("--rate", type=float, help="per-window arrival fraction, overrides 1 - 5/ln(kappa)")
    parser.add_argument("--trace", help="arrival trace: slot,count lines")
    parser.add_argument("--strict-lemmas", action="store_true", default=None,
                        help="abort on the first failed potential bound")
    parser.add_argument("--verify-coding", action="store_true", default=None,
                        help="encode and decode every decoding window over GF(2^8)")
    parser.add_argument("--stride", type=int, help="snapshot sampling stride")
    parser.add_argument("--lookback", type=int, help="decoder lookback in good slots (default 2 kappa)")
    parser.add_argument("--payload-len", type=int, help=f"symbols per payload (default {DEFAULT_PAYLOAD_LEN})")
    parser.add_argument("--protocol", choices=("decodable", "fixed"))
    parser.add_argument("--fixed-p", type=float, help="join probability of the fixed baseline")
    parser.add_argument("--continuous-backlog", action="store_true", default=None,
                        help="track the backlog maximum over every slot")
    parser.add_argument("--sparse", action="store_true", default=None, help="detect sparse-system slots")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="coded-backoff", description="Decodable backoff on the coded radio network model")
    verbs = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    for verb, description in (
        ("run", "simulate one configured run"),
        ("batch", "simulate a single batch of --n packets"),
        ("sweep", "run a grid of configurations"),
    ):
        sub = verbs.add_parser(verb, help=description)
        _add_common(sub)
        _add_run_flags(sub)
        if verb == "sweep":
            sub.add_argument("--kappas", type=_int_list, help="comma list of kappa values")
            sub.add_argument("--seeds", type=_int_list, help="comma list or a-b range of seeds")
            sub.add_argument("--ns", type=_int_list, help="comma list of batch sizes")
            sub.add_argument("--jobs", type=int, help="worker processes")

    validate = verbs.add_parser("validate", help="check an arrival trace against the window cap")
    _add_common(validate)
    validate.add_argument("--trace", help="arrival trace: slot,count lines")
    validate.add_argument("--w", type=int, help="window length")
    validate.add_argument("--rate", type=float, help="per-window arrival fraction")

    replay = verbs.add_parser("replay", help="run the decoding-event detector over a slot trace")
    _add_common(replay)
    replay.add_argument("--trace", help="slot trace: t,<id;id;...> lines")
    replay.add_argument("--lookback", type=int, help="decoder lookback in good slots (default 2 kappa)")

    verify = verbs.add_parser("verify-coding", help="measure the singularity rate of epoch matrices")
    _add_common(verify)
    verify.add_argument("--trials", type=int, help=f"matrices to check (default {DEFAULT_TRIALS})")
    verify.add_argument("--payload-len", type=int, help=f"symbols per payload (default {DEFAULT_PAYLOAD_LEN})")
    return parser


def _merged_values(args: argparse.Namespace) -> dict:
    """Flags over config file over CODED_BACKOFF_SEED over defaults."""
    values: dict = {}
    env_seed = seed_from_env()
    if env_seed is not None:
        values["seed"] = env_seed
    if args.config:
        values.update(load_config_file(args.config))
    for key, value in vars(args).items():
        if key in ("verb", "config", "verbose") or value is None:
            continue
        values[key] = value
    return values


def _run_config(verb: str, values: dict) -> RunConfig:
    schedule = values.get("schedule", "batch")
    if verb == "batch":
        if values.get("schedule", "batch") != "batch":
            raise UsageError("batch: --schedule cannot be changed")
        schedule = "batch"
        if values.get("n") is None:
            raise UsageError("batch: --n is required")
    if schedule == "batch" and values.get("n") == 0:
        raise UsageError("batch: --n must be nonzero")
    return build_run_config(
        kappa=values.get("kappa", DEFAULT_KAPPA),
        horizon=values.get("horizon"),
        seed=values.get("seed", DEFAULT_SEED),
        schedule={
            "kind": schedule,
            "n": values.get("n"),
            "w": values.get("w"),
            "rate": values.get("rate"),
            "trace": values.get("trace"),
        },
        strict_lemmas=values.get("strict_lemmas", False),
        verify_coding=values.get("verify_coding", False),
        stride=values.get("stride"),
        decoder_lookback=values.get("lookback"),
        payload_len=values.get("payload_len", DEFAULT_PAYLOAD_LEN),
        protocol=values.get("protocol", "decodable"),
        fixed_p=values.get("fixed_p"),
        continuous_backlog=values.get("continuous_backlog", False),
        detect_sparse=values.get("sparse", False),
    )


def parse_args(argv: Sequence[str]) -> Command:
    """Parse and resolve a command line; raises UsageError / ConfigError with a one-line message."""
    args = build_parser().parse_args(list(argv))
    values = _merged_values(args)
    command = Command(
        verb=args.verb,
        out=values.get("out"),
        format=values.get("format", "human"),
        verbosity=args.verbose,
    )
    if args.verb in RUN_VERBS:
        command.config = _run_config(args.verb, values)
        if args.verb == "sweep":
            jobs = values.get("jobs")
            if jobs is not None and jobs < 1:
                raise UsageError("sweep: --jobs must be >= 1")
            command.options = {
                "kappas": values.get("kappas") or [],
                "seeds": values.get("seeds") or [],
                "ns": values.get("ns") or [],
                "jobs": jobs,
                "base": _sweep_base(command.config, horizon_given=values.get("horizon") is not None),
            }
        return command

    kappa = values.get("kappa", DEFAULT_KAPPA)
    command.options["kappa"] = kappa
    seed = values.get("seed", DEFAULT_SEED)
    if not seed_in_range(seed):
        raise UsageError(f"{args.verb}: seed must be in [0, 2**128), got {seed}")
    command.options["seed"] = seed
    if args.verb == "validate":
        if not values.get("trace") or values.get("w") is None:
            raise UsageError("validate: --trace and --w are required")
        if kappa < 2:
            raise UsageError(f"validate: kappa must be >= 2, got {kappa}")
        if values["w"] < 1:
            raise UsageError(f"validate: w must be >= 1, got {values['w']}")
        rate = values.get("rate")
        if rate is not None and not 0.0 < rate < 1.0:
            raise UsageError(f"validate: rate must be in (0, 1), got {rate}")
        command.options.update(trace=values["trace"], w=values["w"], rate=rate)
    elif args.verb == "replay":
        if not values.get("trace"):
            raise UsageError("replay: --trace is required")
        if kappa < 1:
            raise UsageError(f"replay: kappa must be >= 1, got {kappa}")
        lookback = values.get("lookback")
        if lookback is not None and lookback < 1:
            raise UsageError(f"replay: lookback must be >= 1, got {lookback}")
        command.options.update(trace=values["trace"], lookback=lookback)
    else:
        trials = values.get("trials", DEFAULT_TRIALS)
        payload_len = values.get("payload_len", DEFAULT_PAYLOAD_LEN)
        if kappa < 6:
            raise UsageError(f"verify-coding: kappa must be >= 6, got {kappa}")
        if trials < 1 or payload_len < 1:
            raise UsageError("verify-coding: --trials and --payload-len must be >= 1")
        command.options.update(trials=trials, payload_len=payload_len)
    return command


def _sweep_base(config: RunConfig, horizon_given: bool) -> dict:
    """Raw values of a sweep's base config, with a defaulted batch horizon left open per cell."""
    base = config.model_dump()
    if config.schedule.kind == "batch" and not horizon_given:
        base["horizon"] = None
    return base


def configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")


def dispatch(command: Command, stdout=None) -> int:
    from coded_backoff.commands import coding_commands, run_commands, trace_commands

    stdout = stdout if stdout is not None else sys.stdout
    handlers = {
        "run": run_commands.handle_run,
        "batch": run_commands.handle_run,
        "sweep": run_commands.handle_sweep,
        "validate": trace_commands.handle_validate,
        "replay": trace_commands.handle_replay,
        "verify-coding": coding_commands.handle_verify_coding,
    }
    return handlers[command.verb](command, stdout)


def main(argv: Optional[Sequence[str]] = None, stdout=None) -> int:
    """Parse, run, and map failures to exit statuses."""
    argv = sys.argv[1:] if argv is None else argv
    try:
        command = parse_args(argv)
    except SystemExit as e:
        # --help
        return e.code if isinstance(e.code, int) else EXIT_OK
    except CodedBackoffError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    configure_logging(command.verbosity)
    try:
        return dispatch(command, stdout)
    except (LemmaViolationError, InvariantError) as e:
        print(f"check failed: {e}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    except CodedBackoffError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        target = f" {e.filename}" if e.filename else ""
        print(f"error:{target} {e.strerror}", file=sys.stderr)
        return EXIT_CONFIG
