"""Command-line experiment runner.

One invocation maps to one experiment: a training run per seed, an
entropy or resampling-similarity sweep, or a gradient self-check. Every
mode writes the fully resolved configuration next to its outputs, and
re-running from that echo reproduces the results byte for byte.
"""

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import analysis, network, numerics, trainer
from .datasets import (
    PairDataset,
    SyntheticSpec,
    generate_synthetic_pairs,
    inject_label_noise,
    load_cifar_binary,
)
from .gradients import fd_gradient, infonce_grad, simple_grad
from .losses import (
    BatchPair,
    ContrastiveInstance,
    DualTempConfig,
    LogitInstance,
    ce_dt_grad,
    dt_loss_with_grads,
    infonce_loss,
    noncl_loss,
    noncl_loss_grad,
    simple_loss,
)
from .trainer import FrameworkSpec, ScheduleConfig

# short command-line names for the framework variants
_FRAMEWORK_ALIASES = {"st": "st-simco", "noncl": "noncl-simsiam"}
_MODES = ("train", "entropy-sweep", "similarity-sweep", "gradcheck")
_GRADCHECK_TOL = 1e-4


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved invocation: every default materialized, aliases
    expanded, seed list explicit. Round-trips through JSON."""

    mode: str
    framework: str
    tau_alpha: float
    tau_beta: float
    dict_size_scalar: int
    dict_size_vector: int
    sampling: str
    momentum: float
    symmetric: bool
    ha_toggle: bool
    epochs: int
    batch_size: int
    base_lr: float
    warmup_epochs: int
    seeds: tuple
    dataset: str
    variant: str
    classes: int
    dim: int
    samples: int
    noise_scale: float
    label_noise: str | None
    noise_ratio: float
    dict_sizes: tuple
    taus: tuple
    output: str

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.noise_ratio < 1.0:
            raise ValueError(f"label-noise ratio must lie in [0, 1), got {self.noise_ratio}")
        if self.label_noise not in (None, "symmetric", "asymmetric"):
            raise ValueError(f"unknown label-noise kind {self.label_noise!r}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.dataset != "synthetic" and not Path(self.dataset).is_file():
            raise ValueError(f"dataset file not found: {self.dataset}")

    def framework_spec(self) -> FrameworkSpec:
        name = _FRAMEWORK_ALIASES.get(self.framework, self.framework)
        beta = self.tau_alpha if name == "st-simco" else self.tau_beta
        return FrameworkSpec(
            name=name,
            dt=DualTempConfig(self.tau_alpha, beta),
            symmetric=self.symmetric,
            momentum=self.momentum,
            queue_scalar=self.dict_size_scalar,
            queue_vector=self.dict_size_vector,
            sample_scalar=min(128, self.dict_size_scalar),
            sample_vector=min(128, self.dict_size_vector),
            sampling=self.sampling,
            ha_toggle=self.ha_toggle,
        )

    def schedule(self, n_train: int) -> ScheduleConfig:
        return ScheduleConfig(
            base_lr=self.base_lr,
            warmup_epochs=min(self.warmup_epochs, self.epochs),
            total_epochs=self.epochs,
            batch_size=min(self.batch_size, max(2, n_train)),
            linear_scaling=True,
        )


def _parse_int_list(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    return tuple(int(part) for part in str(text).split(",") if part.strip())


def _parse_float_list(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(part) for part in str(text).split(",") if part.strip())


def _parse_seeds(text) -> tuple:
    """Either an explicit comma list ('0,5,9') or a bare count ('3' means
    seeds 0..2, matching how runs are usually requested)."""
    values = _parse_int_list(text)
    if isinstance(text, str) and "," not in text and len(values) == 1:
        return tuple(range(values[0]))
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualtemp",
        description="Contrastive-loss laboratory: desk-scale training runs, "
        "dictionary sweeps, and gradient self-checks.",
    )
    parser.add_argument("--config", help="JSON config echo from a previous run; flags given here override it")
    parser.add_argument("--mode", choices=_MODES, default="train")
    parser.add_argument(
        "--framework",
        choices=("mocov2", "simmoco", "simco", "st", "noncl"),
        default="simco",
        help="st = single-temperature simco, noncl = predictor/stop-gradient variant",
    )
    parser.add_argument("--tau-alpha", type=float, default=0.1, help="intra-anchor (vector) temperature")
    parser.add_argument("--tau-beta", type=float, default=1.0, help="inter-anchor (scalar) temperature")
    parser.add_argument("--dict-size-scalar", type=int, default=1024)
    parser.add_argument("--dict-size-vector", type=int, default=1024)
    parser.add_argument("--sampling", choices=("earliest", "random", "newest"), default="newest")
    parser.add_argument("--momentum", type=float, default=0.99)
    parser.add_argument("--symmetric", action="store_true", default=False)
    parser.add_argument("--ha-toggle", action="store_true", default=False)
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--batch-size", type=int, default=128)
    parser.add_argument("--base-lr", type=float, default=0.03)
    parser.add_argument("--warmup-epochs", type=int, default=3)
    parser.add_argument("--seeds", default="3", help="count ('3' = seeds 0..2) or comma list ('0,5,9')")
    parser.add_argument("--dataset", default="synthetic", help="'synthetic' or a CIFAR binary file path")
    parser.add_argument("--variant", choices=("cifar10", "cifar100"), default="cifar10")
    parser.add_argument("--classes", type=int, default=32, help="synthetic class count")
    parser.add_argument(
        "--dim",
        type=int,
        default=None,
        help="synthetic input dimension (default 64); for sweeps, the embedding dimension (default 32)",
    )
    parser.add_argument("--samples", type=int, default=4096, help="synthetic sample count")
    parser.add_argument("--noise-scale", type=float, default=0.1, help="view jitter scale")
    parser.add_argument("--label-noise", choices=("symmetric", "asymmetric"), default=None)
    parser.add_argument("--noise-ratio", type=float, default=0.0)
    parser.add_argument("--dict-sizes", default="64,256,1024,4096", help="sweep dictionary sizes, comma list")
    parser.add_argument("--taus", default="0.1", help="sweep temperatures, comma list")
    parser.add_argument("--output", default="runs", help="output directory, created if missing")
    return parser


def resolve_config(argv) -> ExperimentConfig:
    parser = build_parser()
    probe, _ = parser.parse_known_args(argv)
    if probe.config:
        with open(probe.config) as fh:
            stored = json.load(fh)
        known = set(vars(parser.parse_args([])))
        unknown = set(stored) - known
        if unknown:
            raise ValueError(f"config file has unknown keys: {sorted(unknown)}")
        parser.set_defaults(**stored)
    args = parser.parse_args(argv)
    # the input dimension default depends on the mode: synthetic training
    # data lives in 64 dimensions, sweep embeddings in 32
    dim = args.dim if args.dim is not None else (32 if args.mode.endswith("sweep") else 64)
    return ExperimentConfig(
        mode=args.mode,
        framework=args.framework,
        tau_alpha=args.tau_alpha,
        tau_beta=args.tau_beta,
        dict_size_scalar=args.dict_size_scalar,
        dict_size_vector=args.dict_size_vector,
        sampling=args.sampling,
        momentum=args.momentum,
        symmetric=args.symmetric,
        ha_toggle=args.ha_toggle,
        epochs=args.epochs,
        batch_size=args.batch_size,
        base_lr=args.base_lr,
        warmup_epochs=args.warmup_epochs,
        seeds=_parse_seeds(args.seeds),
        dataset=args.dataset,
        variant=args.variant,
        classes=args.classes,
        dim=dim,
        samples=args.samples,
        noise_scale=args.noise_scale,
        label_noise=args.label_noise,
        noise_ratio=args.noise_ratio,
        dict_sizes=_parse_int_list(args.dict_sizes),
        taus=_parse_float_list(args.taus),
        output=args.output,
    )


def _echo_config(cfg: ExperimentConfig, out_dir: Path) -> None:
    with open(out_dir / "config.json", "w") as fh:
        json.dump(asdict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _build_dataset(cfg: ExperimentConfig) -> tuple[PairDataset, int]:
    """Materialize the training pairs; the draw depends only on the config
    (first seed fixes the data stream), never on per-run training state."""
    data_rng = numerics.make_rng(cfg.seeds[0], stream=3)
    if cfg.dataset == "synthetic":
        spec = SyntheticSpec(cfg.classes, cfg.dim, cfg.samples, cfg.noise_scale)
        dataset = generate_synthetic_pairs(spec, data_rng)
        n_classes = cfg.classes
    else:
        pixels, labels = load_cifar_binary(cfg.dataset, cfg.variant)
        view1 = pixels + cfg.noise_scale * data_rng.normal(size=pixels.shape)
        view2 = pixels + cfg.noise_scale * data_rng.normal(size=pixels.shape)
        dataset = PairDataset(view1, view2, labels)
        n_classes = int(labels.max()) + 1
    if cfg.label_noise is not None and cfg.noise_ratio > 0.0:
        noisy = inject_label_noise(
            dataset.labels, cfg.label_noise, cfg.noise_ratio, data_rng, n_classes=n_classes
        )
        dataset = PairDataset(dataset.view1, dataset.view2, noisy)
    return dataset, n_classes


def _run_train(cfg: ExperimentConfig, out_dir: Path) -> int:
    dataset, n_classes = _build_dataset(cfg)
    spec = cfg.framework_spec()
    n_train = dataset.size - max(1, int(round(dataset.size * 0.2)))
    schedule = cfg.schedule(n_train)
    summary_rows = []
    for seed in cfg.seeds:
        log = trainer.run_training(spec, schedule, dataset, n_classes=n_classes, seed=seed)
        log_path = out_dir / f"{spec.name}_seed{seed}.jsonl"
        log.write(log_path)
        summary_rows.append(
            {
                "framework": spec.name,
                "seed": seed,
                "epochs": cfg.epochs,
                "final_top1": log.final_top1,
                "final_collapse": log.final_collapse,
            }
        )
        print(f"seed {seed}: top1 {log.final_top1:.4f}  collapse {log.final_collapse:.4f}  -> {log_path}")
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(summary_rows[0].keys()))
        writer.writeheader()
        writer.writerows(summary_rows)
    mean_top1 = float(np.mean([row["final_top1"] for row in summary_rows]))
    print(f"mean top1 over {len(cfg.seeds)} seed(s): {mean_top1:.4f}")
    return 0


def _run_entropy_sweep(cfg: ExperimentConfig, out_dir: Path) -> int:
    rows = analysis.entropy_sweep(
        cfg.dict_sizes,
        cfg.taus,
        n_anchors=256,
        dim=cfg.dim,
        seeds=len(cfg.seeds),
        base_seed=cfg.seeds[0],
    )
    path = out_dir / "entropy_sweep.csv"
    analysis.write_sweep_csv(rows, path)
    for (k, tau), value in sorted(analysis.mean_by_cell(rows).items()):
        print(f"K={k:5d} tau={tau:.3g}: mean entropy {value:.6f}")
    print(f"wrote {path}")
    return 0


def _run_similarity_sweep(cfg: ExperimentConfig, out_dir: Path) -> int:
    rows = analysis.similarity_sweep(
        cfg.dict_sizes,
        tau=cfg.taus[0],
        n_anchors=256,
        dim=cfg.dim,
        seeds=len(cfg.seeds),
        base_seed=cfg.seeds[0],
    )
    path = out_dir / "similarity_sweep.csv"
    analysis.write_sweep_csv(rows, path)
    for (k, tau), value in sorted(analysis.mean_by_cell(rows).items()):
        print(f"K={k:5d} tau={tau:.3g}: mean resampling similarity {value:.6f}")
    print(f"wrote {path}")
    return 0


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-relative gradient error; immune to single near-zero components."""
    analytic = np.asarray(analytic, dtype=np.float64)
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12))


def _gradcheck_cases(cfg: ExperimentConfig):
    rng = numerics.make_rng(cfg.seeds[0], stream=4)
    dt = DualTempConfig(cfg.tau_alpha, cfg.tau_beta)

    def instance_errs(make_analytic, make_fd):
        errs = []
        for _ in range(10):
            inst = ContrastiveInstance.random(rng, dim=8, n_negatives=12)
            fd = fd_gradient(make_fd(inst), inst.query)
            errs.append(_rel_err(make_analytic(inst), fd))
        return max(errs)

    yield "infonce_loss", instance_errs(
        lambda inst: infonce_grad(inst, cfg.tau_alpha).full_grad,
        lambda inst: lambda q: infonce_loss(
            ContrastiveInstance(q, inst.positive_key, inst.negative_keys, check=False), cfg.tau_alpha
        ),
    )
    yield "simple_loss", instance_errs(
        simple_grad,
        lambda inst: lambda q: simple_loss(
            ContrastiveInstance(q, inst.positive_key, inst.negative_keys, check=False)
        ),
    )

    # stop-gradient losses: differentiate the surrogate with the frozen
    # factors pinned at the base point
    batch = BatchPair.random(rng, size=6, dim=8)
    _, grad_q, _ = dt_loss_with_grads(batch, dt)
    off = ~np.eye(6, dtype=bool)
    w_a = np.sum(numerics.tempered_softmax(batch.queries @ batch.keys.T, dt.tau_alpha) * off, axis=1)
    w_b = np.sum(numerics.tempered_softmax(batch.queries @ batch.keys.T, dt.tau_beta) * off, axis=1)
    ratio = w_b / w_a

    def dt_surrogate(flat):
        q = flat.reshape(6, 8)
        lp = numerics.tempered_log_softmax(q @ batch.keys.T, dt.tau_alpha)
        return float(np.mean(-ratio * np.diag(lp)))

    yield "dt_loss", _rel_err(grad_q, fd_gradient(dt_surrogate, batch.queries.reshape(-1)).reshape(6, 8))

    errs = []
    for _ in range(10):
        predicted = rng.normal(size=8)
        target = numerics.random_unit_vectors(rng, 1, 8)[0]
        fd = fd_gradient(lambda p: noncl_loss(p, target, ha_factor=0.7), predicted)
        errs.append(_rel_err(noncl_loss_grad(predicted, target, ha_factor=0.7), fd))
    yield "noncl_loss", max(errs)

    errs = []
    for _ in range(10):
        inst = LogitInstance(rng.normal(size=6), gt_index=int(rng.integers(0, 6)))
        p_a = numerics.tempered_softmax(inst.logits, dt.tau_alpha)
        p_b = numerics.tempered_softmax(inst.logits, dt.tau_beta)
        frozen = (1.0 - p_b[inst.gt_index]) / (1.0 - p_a[inst.gt_index])

        def surrogate(logits, gt=inst.gt_index, frozen=frozen):
            lp = numerics.tempered_log_softmax(logits, dt.tau_alpha)
            return float(-frozen * lp[gt])

        fd = fd_gradient(surrogate, inst.logits)
        errs.append(_rel_err(ce_dt_grad(inst, dt), fd))
    yield "ce_dt_loss", max(errs)

    # whole-trainer fixture: a small two-layer encoder under the batch loss
    params = network.init_encoder(rng, in_dim=6, hidden_dim=8, embedding_dim=4, backbone_layers=1)
    x1 = rng.normal(size=(5, 6))
    x2 = rng.normal(size=(5, 6))
    state = trainer.TrainState(
        framework=FrameworkSpec(name="simco", dt=dt),
        online=params,
        predictor=None,
        momentum_copy=None,
        queue_scalar=None,
        queue_vector=None,
        velocity=network.zeros_like_params(params),
        predictor_velocity=None,
        classifier=network.Affine(np.zeros((2, 8)), np.zeros(2)),
    )
    _, grads, _, _ = trainer._batch_dt_step(state, x1, x2)
    e1 = network.encode(params, x1).embeddings
    e2 = network.encode(params, x2).embeddings
    w_a = np.sum(numerics.tempered_softmax(e1 @ e2.T, dt.tau_alpha) * ~np.eye(5, dtype=bool), axis=1)
    w_b = np.sum(numerics.tempered_softmax(e1 @ e2.T, dt.tau_beta) * ~np.eye(5, dtype=bool), axis=1)
    frozen = w_b / w_a

    def trainer_surrogate(flat):
        probe = network.unflatten_params(params, flat)
        q = network.encode(probe, x1).embeddings
        k = network.encode(probe, x2).embeddings
        lp = numerics.tempered_log_softmax(q @ k.T, dt.tau_alpha)
        return float(np.mean(-frozen * np.diag(lp)))

    fd = fd_gradient(trainer_surrogate, network.flatten_params(params))
    yield "trainer_params", _rel_err(network.flatten_params(grads), fd)


def _run_gradcheck(cfg: ExperimentConfig, out_dir: Path) -> int:
    failures = 0
    for name, err in _gradcheck_cases(cfg):
        ok = err <= _GRADCHECK_TOL
        failures += 0 if ok else 1
        print(f"gradcheck {name}: max rel err {err:.3e} (tol {_GRADCHECK_TOL:.0e}) {'PASS' if ok else 'FAIL'}")
    return 0 if failures == 0 else 1


def main(argv=None) -> int:
    try:
        cfg = resolve_config(sys.argv[1:] if argv is None else list(argv))
        out_dir = Path(cfg.output)
        out_dir.mkdir(parents=True, exist_ok=True)
        _echo_config(cfg, out_dir)
        runner = {
            "train": _run_train,
            "entropy-sweep": _run_entropy_sweep,
            "similarity-sweep": _run_similarity_sweep,
            "gradcheck": _run_gradcheck,
        }[cfg.mode]
        return runner(cfg, out_dir)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
