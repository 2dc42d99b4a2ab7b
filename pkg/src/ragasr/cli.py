"""Command-line surface: build datastores, decode, evaluate, and sweep."""

from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from .knn import KnnParams, build_token_datastore
from .metrics import build_report, relative_reduction
from .pipeline import MODES, DecodeConfig, run_batch
from .prompts import build_sentence_datastore
from .storage import import_exports, save_datastore
from .synthetic import Benchmark, make_benchmark

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class ConfigError(Exception):
    """Invalid run configuration (unknown keys, bad values, missing paths)."""


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


@dataclass(frozen=True)
class RunConfig:
    """Declarative run file contents plus command-line overrides."""

    mode: str = "baseline"
    seed: int = 0
    output_dir: str = "out"
    train_size: int = 200
    test_size: int = 50
    min_len: int = 6
    max_len: int = 18
    n_topics: int = 24
    topic_size: int = 10
    vocab_size: int = 64
    embed_dim: int = 32
    sub_mass: float = 0.15
    del_rate: float = 0.03
    ins_rate: float = 0.03
    noise_sigma: float = 0.05
    prefix_bias_beta: float = 1.6
    k: int = 16
    tau: float = 1.0
    lam: float = 0.3
    n_max: int = 10
    audio_budget_s: float = 30.0
    k_sentence: int = 16
    max_decode_len: int = 0
    timing: str = "wall"
    on_error: str = "abort"
    exclude_self: bool = False
    eval_modes: tuple[str, ...] = MODES


_SCHEMA = {
    "run": {"mode": str, "seed": int, "output_dir": str},
    "corpus": {
        "train_size": int, "test_size": int, "min_len": int, "max_len": int,
        "n_topics": int, "topic_size": int,
    },
    "model": {
        "vocab_size": int, "embed_dim": int, "sub_mass": float, "del_rate": float,
        "ins_rate": float, "noise_sigma": float, "prefix_bias_beta": float,
    },
    "knn": {"k": int, "tau": float, "lambda": float},
    "icl": {"n_max": int, "audio_budget_s": float, "k_sentence": int},
    "decode": {
        "max_decode_len": int, "timing": str, "on_error": str, "exclude_self": _parse_bool,
    },
    "eval": {"modes": str},
}

_KEY_TO_FIELD = {("knn", "lambda"): "lam", ("eval", "modes"): "eval_modes"}


def load_run_config(path: str | Path) -> RunConfig:
    """Parse and validate a sectioned key=value run file; unknown keys reject."""
    parser = configparser.ConfigParser()
    try:
        read = parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse run file {path}: {exc}") from exc
    if not read:
        raise ConfigError(f"run file not found: {path}")
    values: dict = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}] in {path}")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}] of {path}")
            convert = _SCHEMA[section][key]
            try:
                value = convert(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {exc}") from exc
            field_name = _KEY_TO_FIELD.get((section, key), key)
            if field_name == "eval_modes":
                value = _parse_modes(value)
            values[field_name] = value
    config = RunConfig(**values)
    _validate_config(config, path)
    return config


def _parse_modes(raw: str) -> tuple[str, ...]:
    if raw.strip().lower() == "all":
        return MODES
    modes = tuple(m.strip() for m in raw.split(",") if m.strip())
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown mode '{m}' (choose from {', '.join(MODES)})")
    if not modes:
        raise ConfigError("eval modes list is empty")
    return modes


def _validate_config(config: RunConfig, source) -> None:
    if config.mode not in MODES:
        raise ConfigError(f"unknown mode '{config.mode}' in {source}")
    if config.timing not in ("wall", "deterministic"):
        raise ConfigError(f"decode.timing must be wall or deterministic in {source}")
    if config.on_error not in ("abort", "skip"):
        raise ConfigError(f"decode.on_error must be abort or skip in {source}")
    if not 0.0 <= config.lam <= 1.0:
        raise ConfigError(f"knn.lambda must lie in [0, 1], got {config.lam}")
    if config.tau <= 0:
        raise ConfigError(f"knn.tau must be positive, got {config.tau}")
    if config.k < 1 or config.k_sentence < 1:
        raise ConfigError("knn.k and icl.k_sentence must be >= 1")
    if config.n_max < 0:
        raise ConfigError("icl.n_max must be non-negative")


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    updates = {}
    for attr, field_name in (
        ("seed", "seed"), ("mode", "mode"), ("lam", "lam"), ("tau", "tau"),
        ("k", "k"), ("n_max", "n_max"), ("budget_s", "audio_budget_s"),
        ("out", "output_dir"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            updates[field_name] = value
    config = replace(config, **updates)
    _validate_config(config, "command line")
    return config


def _benchmark(config: RunConfig) -> Benchmark:
    return make_benchmark(
        seed=config.seed,
        train_size=config.train_size,
        test_size=config.test_size,
        vocab_size=config.vocab_size,
        embed_dim=config.embed_dim,
        sub_mass=config.sub_mass,
        del_rate=config.del_rate,
        ins_rate=config.ins_rate,
        noise_sigma=config.noise_sigma,
        prefix_bias_beta=config.prefix_bias_beta,
        n_topics=config.n_topics,
        topic_size=config.topic_size,
        min_len=config.min_len,
        max_len=config.max_len,
    )


def _decode_config(config: RunConfig, bench: Benchmark, mode: str | None = None) -> DecodeConfig:
    max_len = config.max_decode_len or bench.default_max_decode_len
    return DecodeConfig(
        mode=mode or config.mode,
        knn=KnnParams(k=config.k, tau=config.tau, lam=config.lam),
        n_max=config.n_max,
        audio_budget_s=config.audio_budget_s,
        k_sentence=config.k_sentence,
        max_decode_len=max_len,
        exclude_self=config.exclude_self,
        on_error=config.on_error,
        timing=config.timing,
    )


def _build_stores(bench: Benchmark):
    sentence = build_sentence_datastore(bench.train, bench.model)
    token = build_token_datastore(bench.train, bench.model)
    return sentence, token


def _eval_modes(config: RunConfig, bench: Benchmark, modes, out_dir: Path):
    """Run the requested modes and write per-mode reports plus a comparison table."""
    sentence_store, token_store = _build_stores(bench)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    all_failures = []
    for mode in modes:
        failures: list = []
        results = run_batch(
            bench.model, bench.test, sentence_store, token_store,
            _decode_config(config, bench, mode), failures=failures,
        )
        report = build_report(results, bench.refs)
        report.write_csv(out_dir / f"{mode}.csv")
        report.write_summary(out_dir / f"{mode}.summary.txt")
        rows.append((mode, report))
        all_failures.extend((mode, utt, str(exc)) for utt, exc in failures)
    base_cer = next((r.aggregate_cer for m, r in rows if m == "baseline"), None)
    lines = ["mode,cer,rr,substitutions,deletions,insertions,rtf"]
    for mode, report in rows:
        if mode != "baseline" and base_cer is not None and base_cer > 0:
            rr = f"{relative_reduction(base_cer, report.aggregate_cer):.6f}"
        else:
            rr = ""
        a = report.aggregate_counts
        lines.append(
            f"{mode},{report.aggregate_cer:.6f},{rr},{a.substitutions},"
            f"{a.deletions},{a.insertions},{report.rtf:.6f}"
        )
    (out_dir / "comparison.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if all_failures:
        failure_lines = [f"{mode},{utt},{msg}" for mode, utt, msg in all_failures]
        (out_dir / "failures.txt").write_text("\n".join(failure_lines) + "\n", encoding="utf-8")
    return rows, all_failures


def _cmd_build(args) -> int:
    if args.exports is not None:
        exports_path = Path(args.exports)
        if not exports_path.exists():
            raise ConfigError(f"exports file not found: {exports_path}")
        corpus = import_exports(exports_path)
        utterances, model = corpus.utterances, corpus.model
        if model is None:
            raise RuntimeError("exports file holds no records; nothing to build")
    else:
        if args.config is None:
            raise ConfigError("build requires --exports or --config")
        config = _apply_overrides(load_run_config(args.config), args)
        bench = _benchmark(config)
        utterances = bench.train if args.split == "train" else bench.test
        model = bench.model
    if args.kind == "token":
        store = build_token_datastore(utterances, model)
    else:
        store = build_sentence_datastore(utterances, model)
        for row in range(min(3, len(store))):
            hit = store.index.query_topk(store.index.keys[row], 1)
            if int(hit.ids[0]) != row:
                raise RuntimeError("sentence store self-retrieval smoke check failed")
        print("self-retrieval check: ok")
    save_datastore(store, args.out_path)
    print(f"kind={args.kind} count={len(store.index)} dim={store.index.dim} path={args.out_path}")
    return EXIT_OK


def _cmd_decode(args) -> int:
    config = _apply_overrides(load_run_config(args.config), args)
    bench = _benchmark(config)
    sentence_store, token_store = _build_stores(bench)
    failures: list = []
    results = run_batch(
        bench.model, bench.test, sentence_store, token_store,
        _decode_config(config, bench), failures=failures,
    )
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["id,n_prompts,wall_time_s,audio_s,hypothesis"]
    for res in results:
        hyp = " ".join(str(t) for t in res.hypothesis)
        lines.append(
            f"{res.utterance_id},{res.n_prompts_used},{res.wall_time_s:.6f},"
            f"{res.audio_duration_s:.6f},{hyp}"
        )
    (out_dir / "hypotheses.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for utt, exc in failures:
        print(f"failed: {utt}: {exc}", file=sys.stderr)
    print(f"decoded {len(results)} utterances -> {out_dir / 'hypotheses.csv'}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    config = _apply_overrides(load_run_config(args.config), args)
    modes = _parse_modes(args.modes) if args.modes else config.eval_modes
    bench = _benchmark(config)
    out_dir = Path(config.output_dir)
    rows, failures = _eval_modes(config, bench, modes, out_dir)
    for mode, report in rows:
        print(f"{mode}: cer={report.aggregate_cer:.4f} rtf={report.rtf:.6f}")
    if failures:
        for mode, utt, msg in failures:
            print(f"failed [{mode}] {utt}: {msg}", file=sys.stderr)
    print(f"reports written to {out_dir}")
    return EXIT_OK


_AXES = {
    "n_max": ("n_max", int, lambda v: v >= 0),
    "lambda": ("lam", float, lambda v: 0.0 <= v <= 1.0),
    "tau": ("tau", float, lambda v: v > 0),
}


def _cmd_sweep(args) -> int:
    config = _apply_overrides(load_run_config(args.config), args)
    field_name, cast, ok = _AXES[args.axis]
    raw_values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not raw_values:
        raise ConfigError("sweep requires a non-empty value list")
    values = []
    for raw in raw_values:
        try:
            value = cast(raw)
        except ValueError as exc:
            raise ConfigError(f"bad {args.axis} value {raw!r}: {exc}") from exc
        if not ok(value):
            raise ConfigError(f"{args.axis} value {value} out of range")
        values.append(value)

    bench = _benchmark(config)
    sentence_store, token_store = _build_stores(bench)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["value,cer,rtf"]
    for value in values:
        point = replace(config, **{field_name: value})
        results = run_batch(
            bench.model, bench.test, sentence_store, token_store,
            _decode_config(point, bench),
        )
        report = build_report(results, bench.refs)
        lines.append(f"{value:g},{report.aggregate_cer:.6f},{report.rtf:.6f}")
        print(f"{args.axis}={value:g}: cer={report.aggregate_cer:.4f} rtf={report.rtf:.6f}")
    (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"sweep written to {out_dir / 'sweep.csv'}")
    return EXIT_OK


def _add_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--mode", choices=MODES, default=None)
    parser.add_argument("--lambda", dest="lam", type=float, default=None)
    parser.add_argument("--tau", type=float, default=None)
    parser.add_argument("--k", type=int, default=None)
    parser.add_argument("--n-max", dest="n_max", type=int, default=None)
    parser.add_argument("--budget-s", dest="budget_s", type=float, default=None)
    parser.add_argument("--out", default=None, help="output directory override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragasr",
        description="Retrieval-augmented ASR decoding: build datastores, decode, eval, sweep.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_build = sub.add_parser("build", help="build and persist a datastore")
    p_build.add_argument("--kind", choices=("sentence", "token"), required=True)
    p_build.add_argument("--out-path", required=True, help="datastore file to write")
    p_build.add_argument("--exports", default=None, help="build from an utterance-export file")
    p_build.add_argument("--config", default=None, help="build from a synthetic run config")
    p_build.add_argument("--split", choices=("train", "test"), default="train")
    _add_overrides(p_build)

    p_decode = sub.add_parser("decode", help="decode the configured test set")
    p_decode.add_argument("--config", required=True)
    _add_overrides(p_decode)

    p_eval = sub.add_parser("eval", help="evaluate one or more modes")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--modes", default=None, help="comma list or 'all'")
    _add_overrides(p_eval)

    p_sweep = sub.add_parser("sweep", help="sweep a hyperparameter axis")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--axis", choices=tuple(_AXES), required=True)
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    _add_overrides(p_sweep)
    return parser


_COMMANDS = {
    "build": _cmd_build,
    "decode": _cmd_decode,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
