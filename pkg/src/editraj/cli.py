"""Command-line entry point: ``editraj <command> ...``.

Exit codes: 0 success, 1 internal error, 2 input error, 3 oracle failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from .align import shortest_edit_script
from .dataset import (
    augment_with_pseudolabels,
    build_beneficial_pairs,
    dedup_and_leakage_check,
    make_rng,
    ordered_map,
    pairs_to_sft,
    read_jsonl,
    read_labeled_csv,
    read_sequences,
    sample_random_edits,
    write_jsonl,
)
from .editflow import remote_heads, simulate_budgeted, toy_heads
from .errors import AttemptCapExceeded, InputError, OracleError
from .metrics import MolInstanceResult, instruction_from_json, mol_aggregate, protein_eval
from .oracle import JsonLinesOracle, open_oracle
from .policy import RolloutGroup, SurrogateConfig, load_config, policy_objective
from .reward import load_preset, molecule_reward, protein_reward, reward_specs_from_preset
from .script import OpKind, execute_traced, parse_script, render_script
from .seq import AMINO_ACIDS, SMILES_SAMPLING_TOKENS, AlphabetKind, detokenize, tokenize
from .trace import parse_completion, verify_consistency

log = logging.getLogger("editraj")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_ORACLE = 0, 1, 2, 3
DEFAULT_SEED = 42


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def _emit(args, obj, text: str | None = None) -> None:
    """Write a single result to --output or stdout."""
    if args.format == "text" and text is not None:
        out = text if text.endswith("\n") or not text else text + "\n"
    else:
        out = (json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
               if args.format == "json" else _dump(obj) + "\n")
    if args.output:
        Path(args.output).write_text(out, encoding="utf-8")
    else:
        sys.stdout.write(out)


def _emit_rows(args, rows) -> int:
    if args.output:
        return write_jsonl(args.output, rows)
    return write_jsonl(sys.stdout, rows)


def _write_report(args, report: dict) -> None:
    if getattr(args, "report", None):
        Path(args.report).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n",
                                     encoding="utf-8")
    log.info("report: %s", _dump(report))


@contextmanager
def _oracle(args):
    spec = f"replay:{args.replay}" if args.replay else args.oracle
    oracle = open_oracle(spec, timeout_ms=args.timeout_ms, record=bool(args.record))
    try:
        yield oracle
    finally:
        if args.record and isinstance(oracle, JsonLinesOracle):
            oracle.write_transcript(args.record)
        oracle.close()


def _kinds(text: str) -> tuple[OpKind, ...]:
    try:
        return tuple(OpKind(k.strip().upper()) for k in text.split(",") if k.strip())
    except ValueError as exc:
        raise InputError(f"bad --kinds value {text!r}") from exc


# -- commands ------------------------------------------------------------------

def cmd_align(args) -> int:
    src = tokenize(args.src, args.alphabet)
    tgt = tokenize(args.tgt, args.alphabet)
    script = shortest_edit_script(src, tgt)
    text = render_script(script)
    obj = {"src": args.src, "tgt": args.tgt, "distance": len(script), "script": text}
    _emit(args, obj, (text + "\n" if text else "") + f"# distance {len(script)}")
    return EXIT_OK


def cmd_exec(args) -> int:
    src = tokenize(args.src, args.alphabet)
    script = parse_script(Path(args.script).read_text(encoding="utf-8"), args.alphabet)
    run = execute_traced(src, script, strict=not args.lenient)
    obj = {"output": detokenize(run.output), "steps": len(script), "warnings": run.warnings}
    if args.show_states:
        obj["states"] = [detokenize(s) for s in run.states]
    _emit(args, obj, detokenize(run.output))
    return EXIT_OK


def cmd_verify(args) -> int:
    src = tokenize(args.src, args.alphabet)
    text = Path(args.completion).read_text(encoding="utf-8")
    report = verify_consistency(src, text)
    obj = {"ok": report.ok, **report.to_dict()}
    _emit(args, obj, "consistent" if report.ok else f"inconsistent: {report.first_failure}")
    return EXIT_OK


def _leakage(args, examples) -> dict | None:
    if not args.eval_set:
        return None
    eval_seqs = read_sequences(args.eval_set, args.alphabet)
    train = [ex.completion.output for ex in examples] + [ex.src for ex in examples]
    canonicalizer = None
    ctx = _oracle(args) if args.canonicalize else None
    if ctx:
        with ctx as canonicalizer:
            report = dedup_and_leakage_check(train, eval_seqs, canonicalizer)
    else:
        report = dedup_and_leakage_check(train, eval_seqs, canonicalizer)
    return report.to_dict()


def cmd_sft_build(args) -> int:
    if args.pairs:
        rows = read_jsonl(args.input) if args.input.endswith(".jsonl") else None
        if rows is None:
            import csv
            with open(args.input, newline="", encoding="utf-8") as fh:
                rows = list(csv.DictReader(fh))
        pairs = [(tokenize(r["src"], args.alphabet), tokenize(r["tgt"], args.alphabet)) for r in rows]
    else:
        pool = read_labeled_csv(args.input, args.alphabet)
        if not pool:
            pairs = []
        else:
            if not 0 <= args.anchor_row < len(pool):
                raise InputError(f"anchor row {args.anchor_row} outside the pool")
            anchor = pool[args.anchor_row]
            rest = pool[:args.anchor_row] + pool[args.anchor_row + 1:]
            pairs = build_beneficial_pairs(anchor, rest)
    examples, report = pairs_to_sft(pairs, args.instruction, threads=args.threads)
    _emit_rows(args, (ex.to_json() for ex in examples))
    summary = {"pairs": len(pairs), **report.to_dict()}
    leak = _leakage(args, examples)
    if leak is not None:
        summary["leakage"] = leak
    _write_report(args, summary)
    return EXIT_OK


def cmd_augment(args) -> int:
    anchors = read_labeled_csv(args.input, args.alphabet)
    kinds = _kinds(args.kinds)
    with _oracle(args) as oracle:
        def run(indexed):
            i, anchor = indexed
            rng = make_rng(args.seed, i)
            try:
                return augment_with_pseudolabels(
                    anchor, args.n, oracle, rng, k_min=args.k_min, k_max=args.k_max,
                    attempt_cap=args.attempt_cap, kinds=kinds), None
            except AttemptCapExceeded as exc:
                return exc.pairs, {"anchor": i, "kept": exc.kept, "attempts": exc.attempts}

        results = ordered_map(run, list(enumerate(anchors)), args.threads)
    pairs = [p for kept, _ in results for p in kept]
    capped = [c for _, c in results if c]
    examples, report = pairs_to_sft(pairs, args.instruction, threads=args.threads)
    _emit_rows(args, (ex.to_json() for ex in examples))
    _write_report(args, {"anchors": len(anchors), "capped": capped, **report.to_dict()})
    return EXIT_OK


def cmd_perturb(args) -> int:
    sources = read_sequences(args.input, args.alphabet)
    kinds = _kinds(args.kinds)

    def run(indexed):
        i, src = indexed
        rows = []
        for j in range(args.samples):
            script, out = sample_random_edits(src, args.k_min, args.k_max,
                                              make_rng(args.seed, i, j), kinds=kinds)
            rows.append({"index": i, "sample": j, "src": detokenize(src),
                         "trace": render_script(script), "output": detokenize(out)})
        return rows

    results = ordered_map(run, list(enumerate(sources)), args.threads)
    n = _emit_rows(args, (row for rows in results for row in rows))
    _write_report(args, {"sources": len(sources), "samples": n})
    return EXIT_OK


def cmd_reward(args) -> int:
    rows = read_jsonl(args.input)
    protein_spec, mol_spec = reward_specs_from_preset(load_preset(args.preset))
    with _oracle(args) as oracle:
        def score(row):
            kind = AlphabetKind.PROTEIN if args.task == "protein" else AlphabetKind.SMILES
            src = tokenize(row["src"], kind)
            if args.task == "protein":
                br = protein_reward(src, row["completion"], oracle, protein_spec)
            else:
                instr = instruction_from_json(row.get("instruction") or row["task"])
                br = molecule_reward(src, row["completion"], instr, oracle, mol_spec)
            return {**row, "reward": br.to_dict()}

        scored = ordered_map(score, rows, args.threads)
    _emit_rows(args, scored)
    totals = [r["reward"]["total"] for r in scored]
    _write_report(args, {"rollouts": len(scored),
                         "mean_reward": (sum(totals) / len(totals)) if totals else None,
                         "gated": sum(1 for r in scored
                                      if r["reward"]["components"].get("consistency_gate") == "failed")})
    return EXIT_OK


def _output_seq(row, kind):
    if "completion" in row:
        return parse_completion(row["completion"], kind).output
    return tokenize(row["output"], kind)


def cmd_eval(args) -> int:
    rows = read_jsonl(args.input)
    with _oracle(args) as oracle:
        if args.task == "protein":
            positives = set()
            if args.train_positives:
                positives = {detokenize(s) for s in read_sequences(args.train_positives, "protein")}
            groups: dict[str, list] = {}
            for row in rows:
                groups.setdefault(row["src"], []).append(_output_seq(row, AlphabetKind.PROTEIN))
            per_src = {src: protein_eval(tokenize(src, "protein"), cands, positives, oracle).to_dict()
                       for src, cands in groups.items()}
            _emit(args, {"per_source": per_src})
            return EXIT_OK

        def evaluate(row):
            src = tokenize(row["src"], AlphabetKind.SMILES)
            instr = instruction_from_json(row.get("instruction") or row["task"])
            try:
                out = _output_seq(row, AlphabetKind.SMILES)
            except InputError:
                return MolInstanceResult(instr.task_name, False, False, False)
            return MolInstanceResult.evaluate(oracle.mol_properties(src),
                                              oracle.mol_properties(out), instr)

        results = ordered_map(evaluate, rows, args.threads)
    agg = mol_aggregate(results)
    if args.format == "csv":
        text = agg.to_csv()
        if args.output:
            Path(args.output).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
    else:
        _emit(args, agg.to_dict())
    return EXIT_OK


def cmd_rl_math(args) -> int:
    cfg = load_config(args.preset or f"{args.algo}-paper")
    overrides = {k: getattr(args, k) for k in ("eps_low", "eps_high", "beta_kl")
                 if getattr(args, k) is not None}
    if overrides or cfg.algorithm.value != args.algo:
        cfg = SurrogateConfig(args.algo, overrides.get("eps_low", cfg.eps_low),
                              overrides.get("eps_high", cfg.eps_high),
                              overrides.get("beta_kl", cfg.beta_kl), cfg.adv_epsilon,
                              cfg.num_generations)
    log.info("surrogate config: %s", cfg)
    groups = read_jsonl(args.input)

    def run(row):
        report = policy_objective(RolloutGroup.from_dict(row), cfg).to_dict()
        if "group_id" in row:
            report["group_id"] = row["group_id"]
        return report

    _emit_rows(args, ordered_map(run, groups, args.threads))
    return EXIT_OK


def cmd_editflow(args) -> int:
    seq0 = tokenize(args.seq, args.alphabet)
    vocab = AMINO_ACIDS if seq0.kind is AlphabetKind.PROTEIN else SMILES_SAMPLING_TOKENS
    cap = args.cap if args.cap is not None else len(seq0) + args.budget
    scheme, _, rest = args.head.partition(":")

    def run_all(head_fn):
        def run(j):
            res = simulate_budgeted(seq0, head_fn, args.steps, args.budget, cap,
                                    make_rng(args.seed, j))
            return {"sample": j, "src": args.seq, "final": detokenize(res.final),
                    "script": render_script(res.script), "report": res.report()}
        return ordered_map(run, list(range(args.samples)), args.threads)

    if scheme == "toy":
        rows = run_all(toy_heads(rest, vocab))
    elif scheme in ("stdio", "tcp"):
        client = open_oracle(args.head, timeout_ms=args.timeout_ms)
        try:
            rows = run_all(remote_heads(client, args.remote_head))
        finally:
            client.close()
    else:
        raise InputError(f"unknown head spec {args.head!r}")
    _emit_rows(args, rows)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=DEFAULT_SEED)
    g.add_argument("--oracle", default="toy:default",
                   help="toy:<name> | stdio:<cmd> | tcp:<host:port> | replay:<file>")
    g.add_argument("--format", choices=("json", "jsonl", "csv", "text"), default="jsonl")
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("--record", metavar="FILE", help="record oracle traffic to a transcript")
    g.add_argument("--replay", metavar="FILE", help="answer oracle requests from a transcript")
    g.add_argument("--timeout-ms", type=int, default=30_000)
    g.add_argument("-o", "--output", help="output file (default stdout)")
    g.add_argument("--report", help="write the run report JSON here")
    g.add_argument("-q", "--quiet", action="store_true", help="log warnings only")

    p = argparse.ArgumentParser(prog="editraj", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        return sp

    def alphabet(sp, default="protein"):
        sp.add_argument("--alphabet", choices=[k.value for k in AlphabetKind], default=default)

    sp = add("align", cmd_align, "shortest edit script between two sequences")
    alphabet(sp)
    sp.add_argument("src")
    sp.add_argument("tgt")

    sp = add("exec", cmd_exec, "execute a script file on a source sequence")
    alphabet(sp)
    sp.add_argument("src")
    sp.add_argument("script")
    sp.add_argument("--lenient", action="store_true", help="warn on token mismatches instead of failing")
    sp.add_argument("--show-states", action="store_true")

    sp = add("verify", cmd_verify, "parse-and-execute consistency of a completion file")
    alphabet(sp)
    sp.add_argument("src")
    sp.add_argument("completion")

    sp = add("sft-build", cmd_sft_build, "build SFT JSONL from a labeled pool or explicit pairs")
    alphabet(sp)
    sp.add_argument("input", help="pool CSV (sequence,label) or, with --pairs, CSV/JSONL with src,tgt")
    sp.add_argument("--pairs", action="store_true")
    sp.add_argument("--anchor-row", type=int, default=0)
    sp.add_argument("--instruction", default="Optimize the sequence.")
    sp.add_argument("--eval-set", help="sequences to check for train/eval leakage")
    sp.add_argument("--canonicalize", action="store_true",
                    help="compare leakage after oracle canonicalization")

    sp = add("augment", cmd_augment, "pseudo-labeled random-edit augmentation")
    alphabet(sp)
    sp.add_argument("input", help="anchors CSV (sequence,label)")
    sp.add_argument("-n", type=int, default=10, help="kept variants per anchor")
    sp.add_argument("--k-min", type=int, default=1)
    sp.add_argument("--k-max", type=int, default=3)
    sp.add_argument("--kinds", default="insert,delete,replace")
    sp.add_argument("--attempt-cap", type=int, default=None)
    sp.add_argument("--instruction", default="Optimize the sequence.")

    sp = add("perturb", cmd_perturb, "random-perturbation baseline samples")
    alphabet(sp)
    sp.add_argument("input", help="file with one source sequence per line")
    sp.add_argument("--samples", type=int, default=1)
    sp.add_argument("--k-min", type=int, default=1)
    sp.add_argument("--k-max", type=int, default=3)
    sp.add_argument("--kinds", default="insert,delete,replace")

    sp = add("reward", cmd_reward, "score rollouts (JSONL with src, completion[, task])")
    sp.add_argument("input")
    sp.add_argument("--task", choices=("protein", "molecule"), required=True)
    sp.add_argument("--preset", default="reward-default")

    sp = add("eval", cmd_eval, "evaluation metrics over generated outputs")
    sp.add_argument("task", choices=("protein", "molecule"))
    sp.add_argument("input", help="JSONL rows with src and output (or completion)[, task]")
    sp.add_argument("--train-positives", help="protein: positive SFT training sequences")

    sp = add("rl-math", cmd_rl_math, "GRPO/GSPO/CISPO objective reports for logged groups")
    sp.add_argument("input")
    sp.add_argument("--algo", choices=("grpo", "gspo", "cispo"), default="grpo")
    sp.add_argument("--preset", help="preset name or JSON file (default <algo>-paper)")
    sp.add_argument("--eps-low", type=float)
    sp.add_argument("--eps-high", type=float)
    sp.add_argument("--beta-kl", type=float)

    sp = add("editflow", cmd_editflow, "budgeted first-order Edit Flows sampling")
    alphabet(sp)
    sp.add_argument("seq")
    sp.add_argument("--head", default="toy:zero", help="toy:<zero|uniform|sub0|hash> | stdio:<cmd> | tcp:<addr>")
    sp.add_argument("--remote-head", default=None, help="head name forwarded to a remote server")
    sp.add_argument("--steps", type=int, default=100)
    sp.add_argument("--budget", type=int, default=3)
    sp.add_argument("--cap", type=int, default=None, help="length cap (default len(seq) + budget)")
    sp.add_argument("--samples", type=int, default=1)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    config = {k: v for k, v in vars(args).items() if k != "func"}
    log.info("resolved config: %s", _dump(config))
    try:
        return args.func(args)
    except InputError as exc:
        print(f"editraj: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OracleError as exc:
        print(f"editraj: oracle failure: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except (OSError, ValueError, KeyError) as exc:
        print(f"editraj: error: {exc!r}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover - last resort
        log.exception("internal error")
        print(f"editraj: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
