"""Config-driven experiment runner.

Subcommands: ``gen-data`` (write datasets/worlds plus a manifest),
``train`` (fit any method, one checkpoint and trace per seed), ``attack``
(build adversarial test sets against a trained victim), ``report``
(bound-report CSV plus the four-bar SVG figure), ``verify`` (exhaustive
theorem suites over constructed worlds).

Exit codes: 0 success, 1 validation failure, 2 numerical failure or a hard
theorem violation, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import attacks, bounds, datagen, figures, models
from . import train as train_mod
from .activeset import ExactCache, degenerate_active_sets, load_world, save_world, verify_realized_hypothesis
from .config import RunConfig, parse_config
from .core import Dataset, NumericalError, Rng, ValidationError, split_dataset, zero_one_error

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # default argparse exit code clashes with ours
        raise ValidationError(message)


def _outdir(cfg: RunConfig, create: bool = False) -> Path:
    out = Path(cfg.get("output", "directory"))
    if create:
        out.mkdir(parents=True, exist_ok=True)
    elif not out.is_dir():
        raise ValidationError(f"output directory {out} does not exist; run gen-data first")
    return out


def _split_path(outdir: Path, name: str, seed: int) -> Path:
    per_seed = outdir / f"{name}_seed{seed}.csv"
    return per_seed if per_seed.exists() else outdir / f"{name}.csv"


def _load_split(outdir: Path, name: str, seed: int, origin: str) -> Dataset:
    path = _split_path(outdir, name, seed)
    if not path.exists():
        raise ValidationError(f"missing dataset file {path}")
    return Dataset.from_csv(path, origin=origin)


def _arch(cfg: RunConfig, p: int) -> models.Architecture:
    kind = cfg.get("model", "arch")
    hidden = cfg.get("model", "hidden") if kind == "mlp" else 0
    return models.Architecture(kind=kind, input_dim=p, hidden_dim=hidden)


def _perturb_spec(cfg: RunConfig, p: int) -> attacks.PerturbSpec:
    lo, hi = cfg.box()
    return attacks.PerturbSpec(
        mask=cfg.mask_indices(p),
        lo=lo,
        hi=hi,
        epsilon=cfg.get("attack", "epsilon"),
        rate=cfg.get("attack", "rate"),
        steps=cfg.get("attack", "steps"),
    )


def _write_rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


# -- gen-data -------------------------------------------------------------------


def cmd_gen_data(cfg: RunConfig) -> int:
    out = _outdir(cfg, create=True)
    kind = cfg.get("data", "kind")
    seeds = cfg.seeds
    files: dict[str, str] = {}
    manifest = {
        "config_hash": cfg.config_hash,
        "data_kind": kind,
        "seeds": seeds,
        "files": files,
    }
    if kind == "synthetic":
        p = cfg.get("data", "p")
        manifest["spurious_indices"] = list(datagen.spurious_indices(p))
        for seed in seeds:
            scfg = datagen.SyntheticConfig(
                n=cfg.get("data", "n"), p=p, rho=cfg.get("data", "rho"), seed=seed,
                per_coordinate_rho=cfg.get("data", "per_coordinate_rho"),
            )
            effects = datagen.EffectSizes.sample(p, Rng(seed).derive(9))
            for split in ("train", "val", "test"):
                ds = datagen.gen_synthetic(scfg, effects, split)
                name = f"{split}_seed{seed}.csv"
                ds.to_csv(out / name)
                files[name] = split
    elif kind == "world":
        wcfg = datagen.ToyWorldConfig(
            aligned_size=cfg.get("data", "aligned_size"),
            misaligned_size=cfg.get("data", "misaligned_size"),
        )
        n = cfg.get("data", "n")
        for seed in seeds:
            world, cls = datagen.make_toy_world(wcfg, Rng(seed))
            name = f"world_seed{seed}.txt"
            save_world(out / name, world, cls.tables, cls.names)
            files[name] = "world"
            src = datagen.sample_source_dataset(world, n, Rng(seed).derive(4))
            tgt = datagen.mirror_target_dataset(world, src, Rng(seed).derive(5))
            src.to_csv(out / f"train_seed{seed}.csv")
            tgt.to_csv(out / f"test_seed{seed}.csv")
            files[f"train_seed{seed}.csv"] = "train"
            files[f"test_seed{seed}.csv"] = "test"
    else:  # idx
        ds = datagen.load_idx(cfg.get("data", "images"), cfg.get("data", "labels"))
        vf = cfg.get("data", "val_fraction")
        if vf > 0:
            tr, va = split_dataset(ds, [1.0 - vf, vf], Rng(seeds[0]))
            tr.to_csv(out / "train.csv")
            va.to_csv(out / "val.csv")
            files["train.csv"] = "train"
            files["val.csv"] = "val"
        else:
            ds.to_csv(out / "train.csv")
            files["train.csv"] = "train"
    with open(out / "manifest.json", "w", encoding="utf-8", newline="") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"gen-data: wrote {len(files)} files to {out}")
    return EXIT_OK


# -- train ------------------------------------------------------------------------


def _make_perturber(cfg: RunConfig, outdir: Path, seed: int, p: int):
    if cfg.get("data", "kind") == "world":
        world, _, _ = load_world(outdir / f"world_seed{seed}.txt")
        return attacks.exhaustive_perturber(world)
    spec = _perturb_spec(cfg, p)
    kind = cfg.get("attack", "kind")
    if kind == "resample":
        mask = cfg.mask_indices(p)
        return attacks.resample_perturber(
            mask if mask is not None else range(p), draws=cfg.get("attack", "draws")
        )
    return attacks.attack_perturber(kind, spec)


def _make_side_model(cfg: RunConfig, arch: models.Architecture, rng: Rng,
                     target: str) -> models.SideModel:
    kind = cfg.get("train", "side_arch")
    hidden = cfg.get("train", "side_hidden") if kind == "mlp" else 0
    return models.SideModel.for_encoder(arch, rng, target=target, kind=kind,
                                        hidden_dim=hidden)


def _train_one(cfg: RunConfig, outdir: Path, seed: int, data: Dataset):
    arch = _arch(cfg, data.p)
    method = cfg.get("train", "method")
    tcfg = train_mod.TrainConfig(
        epochs=cfg.get("train", "epochs"),
        learning_rate=cfg.learning_rate(),
        batch_size=cfg.get("train", "batch_size"),
        seed=seed,
        reg_balance=cfg.get("train", "reg_balance"),
        early_stop_patience=cfg.get("train", "early_stop_patience"),
    )
    rng_side = Rng(seed).derive(3)
    if method == "erm":
        return arch, train_mod.train_erm(data, arch, tcfg)
    if method == "wt":
        perturber = _make_perturber(cfg, outdir, seed, data.p)
        return arch, train_mod.train_worst_case(data, arch, tcfg, perturber)
    if method == "wrm-arl":
        scheme = train_mod.ArlScheme(data.p, rng_side, learning_rate=tcfg.learning_rate)
        return arch, train_mod.train_wrm(data, arch, tcfg, scheme)
    if method == "wrm-lff":
        scheme = train_mod.LffScheme(arch, rng_side, learning_rate=tcfg.learning_rate)
        return arch, train_mod.train_wrm(data, arch, tcfg, scheme)
    if method == "wrm-groupdro":
        if data.group is None:
            raise ValidationError("wrm-groupdro needs a group column in the training data")
        return arch, train_mod.train_wrm(data, arch, tcfg, train_mod.GroupDroScheme())
    if method == "reg":
        target = cfg.get("train", "side_target")
        if target == "annotation" and data.aux is None:
            raise ValidationError("reg with annotation target needs an aux column")
        side = _make_side_model(cfg, arch, rng_side, target)
        return arch, train_mod.train_regularized(data, arch, tcfg, side)
    if method == "wr":
        if data.aux is None:
            raise ValidationError("wr needs an aux column in the training data")
        side = _make_side_model(cfg, arch, rng_side, "annotation")
        perturber = _make_perturber(cfg, outdir, seed, data.p)
        return arch, train_mod.train_wr(data, arch, tcfg, perturber, side)
    raise ValidationError(f"unknown method {method!r}")


def cmd_train(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    method = cfg.get("train", "method")
    for seed in cfg.seeds:
        data = _load_split(out, "train", seed, origin="source")
        arch, result = _train_one(cfg, out, seed, data)
        models.save_checkpoint(arch, result.params, out / f"{method}_seed{seed}.ckpt")
        columns = result.trace_columns
        rows = [
            [str(r["epoch"])] + [repr(float(r[c])) for c in columns[1:]]
            for r in result.trace
        ]
        _write_rows(out / f"trace_{method}_seed{seed}.csv", columns, rows)
        last = result.trace[-1]
        print(
            f"train[{method} seed={seed}]: epochs={last['epoch']} "
            f"loss={last['train_loss']:.4f} err={last['train_err']:.4f}"
        )
    return EXIT_OK


# -- attack ----------------------------------------------------------------------


def cmd_attack(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    method = cfg.get("train", "method")
    kind = cfg.get("attack", "kind")
    for seed in cfg.seeds:
        ckpt = out / f"{method}_seed{seed}.ckpt"
        if not ckpt.exists():
            raise ValidationError(f"missing victim checkpoint {ckpt}")
        arch, params = models.load_checkpoint(ckpt)
        clean_name = "val" if _split_path(out, "val", seed).exists() else "train"
        clean = _load_split(out, clean_name, seed, origin="source")
        spec = _perturb_spec(cfg, clean.p)
        adv = attacks.build_adversarial_testset(
            (arch, params), clean, kind, spec, Rng(seed).derive(7)
        )
        adv.to_csv(out / f"adversarial_{kind}_seed{seed}.csv")
        err = zero_one_error(models.forward_batch(arch, params, adv.X)[0], adv.y)
        print(f"attack[{kind} seed={seed}]: victim error on attacked set = {err:.4f}")
    return EXIT_OK


# -- report ----------------------------------------------------------------------


def _equalize(src: Dataset, tgt: Dataset, rng: Rng):
    """Subsample the larger dataset so both share one n (seeded)."""
    if src.n == tgt.n:
        return src, tgt
    n = min(src.n, tgt.n)
    if src.n > n:
        src = src.take(rng.permutation(src.n)[:n])
    else:
        tgt = tgt.take(rng.permutation(tgt.n)[:n])
    return src, tgt


def _discover_methods(outdir: Path, seed: int) -> list[str]:
    methods = set()
    for path in outdir.glob(f"*_seed{seed}.ckpt"):
        methods.add(path.name[: -len(f"_seed{seed}.ckpt")])
    return sorted(methods)


def _report_target(cfg: RunConfig, outdir: Path, seed: int) -> Dataset:
    if cfg.get("bounds", "target_kind") == "attack":
        kind = cfg.get("attack", "kind")
        return _load_split(outdir, f"adversarial_{kind}", seed, origin="target")
    return _load_split(outdir, "test", seed, origin="target")


def cmd_report(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    estimator = cfg.get("bounds", "estimator")
    delta = cfg.get("bounds", "delta")
    rows = []
    for seed in cfg.seeds:
        src = _load_split(out, "train", seed, origin="source")
        tgt = _report_target(cfg, out, seed)
        methods = _discover_methods(out, seed)
        if not methods:
            raise ValidationError(f"no checkpoints found for seed {seed}; run train first")
        world = cls = None
        if estimator == "exact":
            world_path = out / f"world_seed{seed}.txt"
            if cfg.get("data", "world_file"):
                world_path = Path(cfg.get("data", "world_file"))
            if not world_path.exists():
                raise ValidationError(f"exact estimator needs a world file, missing {world_path}")
            world, tables, names = load_world(world_path)
            if tables is None:
                raise ValidationError("exact estimator needs a stored hypothesis class")
            cls = bounds.FiniteHypothesisClass(
                domain_size=world.domain.size, tables=tables, names=tuple(names)
            )
        src_eq, tgt_eq = _equalize(src, tgt, Rng(seed).derive(11))
        if estimator == "exact":
            d_val = bounds.h_divergence_exhaustive(cls, src_eq, tgt_eq, world)
        else:
            # the distinguishability term depends only on the datasets:
            # train the discriminator once per seed and reuse across methods
            disc_kind = cfg.get("bounds", "discriminator_arch")
            disc_arch = models.Architecture(
                kind=disc_kind,
                input_dim=src.p,
                hidden_dim=cfg.get("bounds", "discriminator_hidden") if disc_kind == "mlp" else 0,
            )
            d_val = bounds.h_divergence_discriminator(
                src_eq, tgt_eq, disc_arch,
                epochs=cfg.get("bounds", "discriminator_epochs"),
                learning_rate=cfg.get("bounds", "discriminator_lr"),
                seed=seed,
                restarts=cfg.get("bounds", "discriminator_restarts"),
                batch_size=cfg.get("bounds", "discriminator_batch"),
            )
        for method in methods:
            arch, params = models.load_checkpoint(out / f"{method}_seed{seed}.ckpt")
            pred = models.predictor(arch, params)
            train_err = zero_one_error(models.forward_batch(arch, params, src.X)[0], src.y)
            test_err = zero_one_error(models.forward_batch(arch, params, tgt.X)[0], tgt.y)
            if estimator == "exact":
                c_val = bounds.compute_c(pred, src, world)
                q_val = bounds.compute_q(pred, tgt, world)
                phi = bounds.phi_finite(cls.size, src.n, delta)
            else:
                spec = _perturb_spec(cfg, src.p)
                kind = cfg.get("attack", "kind")
                c_val = bounds.estimate_c_by_search(
                    pred, src,
                    attacks.spec_searcher(spec, kind, Rng(seed).derive(12), (arch, params)),
                    budget=spec.steps,
                )
                q_val = bounds.estimate_c_by_search(
                    pred, tgt,
                    attacks.spec_searcher(spec, kind, Rng(seed).derive(13), (arch, params)),
                    budget=spec.steps,
                )
                phi = bounds.phi_finite(cfg.get("bounds", "class_size"), src.n, delta)
            report = bounds.BoundReport.assemble(
                train_err=train_err, test_err=test_err, c=c_val, q=q_val,
                d_theta=d_val, phi=phi, delta=delta,
            )
            rows.append({
                "method": method, "seed": seed,
                "train_err": report.train_err, "test_err": report.test_err,
                "c": report.c, "q": report.q, "d_theta": report.d_theta,
                "phi": report.phi, "bound_c": report.bound_c, "bound_d": report.bound_d,
            })
    rows.sort(key=lambda r: (r["method"], r["seed"]))
    csv_rows = [
        [r["method"], str(r["seed"])]
        + [repr(float(r[k])) for k in bounds.BOUND_CSV_HEADER[2:]]
        for r in rows
    ]
    _write_rows(out / "bounds.csv", bounds.BOUND_CSV_HEADER, csv_rows)
    if cfg.get("output", "emit_svg"):
        figures.bound_bars_figure(rows, out / "bounds.svg")
    print(f"report: wrote {len(rows)} rows to {out / 'bounds.csv'}")
    return EXIT_OK


# -- verify ----------------------------------------------------------------------


def cmd_verify(cfg: RunConfig) -> int:
    out = _outdir(cfg, create=True)
    seeds = cfg.seeds
    n = cfg.get("data", "n")
    delta = cfg.get("bounds", "delta")
    trials = cfg.get("bounds", "trials")
    world_file = cfg.get("data", "world_file")
    worlds = []
    if world_file:
        world, tables, names = load_world(world_file)
        if tables is None:
            cls = datagen.enumerate_class_for_world(world)
        else:
            cache = ExactCache(world)
            verify_realized_hypothesis(world, tables, names, cache)  # identifies the offending member
            cls = bounds.FiniteHypothesisClass(
                domain_size=world.domain.size, tables=tables, names=tuple(names)
            )
        worlds.append((0, world, cls))
    else:
        wcfg = datagen.ToyWorldConfig(
            aligned_size=cfg.get("data", "aligned_size"),
            misaligned_size=cfg.get("data", "misaligned_size"),
        )
        base = Rng(seeds[0])
        for w in range(cfg.get("data", "worlds")):
            world, cls = datagen.make_toy_world(wcfg, base.derive(w))
            worlds.append((w, world, cls))
    report = {
        "config_hash": cfg.config_hash,
        "delta": delta,
        "trials_per_world": trials,
        "n_per_dataset": n,
        "worlds": [],
    }
    total_checks = total_violations = 0
    implication_bad = comparison_bad = 0
    for w, world, cls in worlds:
        rng = Rng(seeds[0]).derive(1000 + w)
        cache = ExactCache(world)
        r31 = bounds.verify_generalization_bound(
            world, cls, trials=trials, rng=rng, n_per_trial=n, delta=delta, cache=cache
        )
        src = datagen.sample_source_dataset(world, n, rng.derive(1))
        tgt = datagen.mirror_target_dataset(world, src, rng.derive(2))
        r32 = bounds.verify_bound_comparison(world, cls, src, tgt, cache=cache)
        rl = bounds.implication_sweep(world, cls, cache=cache)
        total_checks += r31.checks
        total_violations += r31.violations
        comparison_bad += r32.violations
        implication_bad += rl.counterexamples
        report["worlds"].append({
            "world": w,
            "class_size": cls.size,
            "support_size": int(world.support.size),
            # support points whose misaligned active set is empty (possible
            # for non-monotone labeling functions in hand-written worlds)
            "degenerate_support_points": len(degenerate_active_sets(world)),
            "bound_check": r31.to_dict(),
            "comparison_check": r32.to_dict(),
            "implication_sweep": rl.to_dict(),
        })
    allowance = delta * total_checks
    report["totals"] = {
        "bound_checks": total_checks,
        "bound_violations": total_violations,
        "bound_allowance": allowance,
        "comparison_violations": comparison_bad,
        "implication_counterexamples": implication_bad,
    }
    with open(out / "verify_report.json", "w", encoding="utf-8", newline="") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    ok = total_violations <= allowance and comparison_bad == 0 and implication_bad == 0
    print(
        f"verify: {len(worlds)} worlds, bound violations {total_violations}/"
        f"{total_checks} (allowance {allowance:.1f}), comparison violations "
        f"{comparison_bad}, implication counterexamples {implication_bad}"
    )
    if not ok:
        print("verify: HARD VIOLATION", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="misalign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen-data", "train", "attack", "report", "verify"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the run config file")
        p.add_argument("--out", default=None, help="override output.directory")
        p.add_argument("--seed", type=int, default=None, help="override seeds.list with one seed")
    return parser


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "attack": cmd_attack,
    "report": cmd_report,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = parse_config(args.config, out_dir=args.out, seed=args.seed)
        return _COMMANDS[args.command](cfg)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"io failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
