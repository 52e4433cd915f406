"""Run configuration files and the standard architecture recipes."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .data import BernoulliMask, LabelOnly, LabelPlus, PerlinMask, SquarePatches
from .dynamics import ArchSpec, LayerSpec, LeakySigmoid, Tanh, conv_layer, fc_layer
from .training import TrainConfig

__all__ = [
    "RunConfig",
    "load_run_config",
    "run_config_from_dict",
    "arch_to_dict",
    "arch_from_dict",
    "mask_to_dict",
    "mask_from_dict",
    "train_to_dict",
    "train_from_dict",
    "bar_arch",
    "supervised_digits_arch",
    "omniglot_arch",
    "cifar10_arch",
    "superres_arch",
]

TASKS = ("bar", "mnist-supervised", "completion")


@dataclass
class RunConfig:
    """One training run: task, architecture, training recipe, data, output."""

    task: str
    arch: ArchSpec
    train: TrainConfig
    mask: object | None
    data: dict
    output_dir: str
    seed: int

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")


def _activation_to_dict(kind):
    if isinstance(kind, Tanh):
        return {"kind": "tanh"}
    return {"kind": "leaky_sigmoid", "alpha": kind.alpha}


def _activation_from_dict(d):
    if d["kind"] == "tanh":
        return Tanh()
    if d["kind"] == "leaky_sigmoid":
        return LeakySigmoid(float(d["alpha"]))
    raise ValueError(f"unknown activation kind {d['kind']!r}")


def arch_to_dict(arch):
    layers = []
    for spec in arch.layers:
        if spec.kind == "fc":
            d = {"kind": "fc", "units": spec.units}
        else:
            d = {"kind": "conv", "channels": spec.channels, "height": spec.height,
                 "width": spec.width, "pool_before": spec.pool_before}
        if spec.visible:
            d["visible"] = True
        layers.append(d)
    return {
        "layers": layers,
        "kernel_sizes": list(arch.kernel_sizes),
        "activation": _activation_to_dict(arch.activation),
        "symmetric": arch.symmetric,
    }


def arch_from_dict(d):
    layers = []
    for ld in d["layers"]:
        if ld["kind"] == "fc":
            layers.append(fc_layer(int(ld["units"]), visible=ld.get("visible", False)))
        elif ld["kind"] == "conv":
            layers.append(conv_layer(int(ld["channels"]), int(ld["height"]),
                                     int(ld["width"]),
                                     pool_before=ld.get("pool_before", False),
                                     visible=ld.get("visible", False)))
        else:
            raise ValueError(f"unknown layer kind {ld['kind']!r}")
    return ArchSpec(layers=tuple(layers),
                    kernel_sizes=tuple(int(k) for k in d.get("kernel_sizes", ())),
                    activation=_activation_from_dict(d.get("activation", {"kind": "tanh"})),
                    symmetric=d.get("symmetric", True))


def mask_to_dict(spec):
    if spec is None:
        return None
    if isinstance(spec, PerlinMask):
        return {"kind": "perlin", "frequency": spec.frequency,
                "obscured_fraction": spec.obscured_fraction}
    if isinstance(spec, SquarePatches):
        return {"kind": "patches", "diameter_min": spec.diameter_min,
                "diameter_max": spec.diameter_max,
                "white_fraction": spec.white_fraction}
    if isinstance(spec, BernoulliMask):
        return {"kind": "bernoulli", "p": spec.p}
    if isinstance(spec, LabelOnly):
        return {"kind": "label_only"}
    if isinstance(spec, LabelPlus):
        return {"kind": "label_plus", "inner": mask_to_dict(spec.inner)}
    raise ValueError(f"cannot serialize mask spec {spec!r}")


def mask_from_dict(d):
    if d is None:
        return None
    kind = d["kind"]
    if kind == "perlin":
        return PerlinMask(frequency=int(d.get("frequency", 7)),
                          obscured_fraction=float(d.get("obscured_fraction", 1 / 3)))
    if kind == "patches":
        return SquarePatches(diameter_min=int(d.get("diameter_min", 3)),
                             diameter_max=int(d.get("diameter_max", 6)),
                             white_fraction=float(d.get("white_fraction", 0.25)))
    if kind == "bernoulli":
        return BernoulliMask(p=float(d["p"]))
    if kind == "label_only":
        return LabelOnly()
    if kind == "label_plus":
        return LabelPlus(inner=mask_from_dict(d["inner"]))
    raise ValueError(f"unknown mask kind {kind!r}")


_TRAIN_FIELDS = ("epochs", "loss", "optimizer", "lr", "adam_beta1", "adam_beta2",
                 "adam_eps", "theta", "max_iters", "batch_size", "seed",
                 "evidence_mode", "conv_init_std")


def train_to_dict(cfg):
    d = {name: getattr(cfg, name) for name in _TRAIN_FIELDS}
    d["lr_schedule"] = [list(pair) for pair in cfg.lr_schedule]
    return d


def train_from_dict(d):
    kwargs = {name: d[name] for name in _TRAIN_FIELDS if name in d}
    if "lr_schedule" in d:
        kwargs["lr_schedule"] = tuple((int(e), float(m)) for e, m in d["lr_schedule"])
    return TrainConfig(**kwargs)


def run_config_from_dict(d, base_dir=None, check_paths=True):
    if "seed" not in d:
        raise ValueError("config must carry an explicit seed")
    seed = int(d["seed"])
    train_dict = dict(d.get("train", {}))
    train_dict.setdefault("seed", seed)
    data = dict(d.get("data", {}))
    if check_paths:
        for key, value in data.items():
            path = Path(value)
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            if not path.exists():
                raise FileNotFoundError(f"data path {key!r} does not exist: {path}")
            data[key] = str(path)
    return RunConfig(
        task=d["task"],
        arch=arch_from_dict(d["arch"]),
        train=train_from_dict(train_dict),
        mask=mask_from_dict(d.get("mask")),
        data=data,
        output_dir=str(d.get("output_dir", "out")),
        seed=seed,
    )


def load_run_config(path, check_paths=True):
    """Parse and validate a JSON run configuration."""
    path = Path(path)
    with open(path) as f:
        d = json.load(f)
    return run_config_from_dict(d, base_dir=path.parent, check_paths=check_paths)


# ---------------------------------------------------------------------------
# standard recipes

def bar_arch(hidden=(50,)):
    """5x5 bar task: flat 25-unit visible layer plus hidden stack."""
    layers = [fc_layer(25, visible=True)] + [fc_layer(h) for h in hidden]
    return ArchSpec(layers=tuple(layers))


def supervised_digits_arch():
    """28x28 digits plus one label row: 812-200-50."""
    return ArchSpec(layers=(fc_layer(812, visible=True), fc_layer(200), fc_layer(50)))


def omniglot_arch():
    """28x28x1 visible; hidden 28x28x128, 14x14x256, 7x7x512; 3x3 kernels."""
    return ArchSpec(
        layers=(conv_layer(1, 28, 28, visible=True),
                conv_layer(128, 28, 28),
                conv_layer(256, 14, 14, pool_before=True),
                conv_layer(512, 7, 7, pool_before=True)),
        kernel_sizes=(3, 3, 3))


def cifar10_arch():
    """32x32x3 visible; hidden 32x32x40, 16x16x120, 8x8x440; 3x3 kernels."""
    return ArchSpec(
        layers=(conv_layer(3, 32, 32, visible=True),
                conv_layer(40, 32, 32),
                conv_layer(120, 16, 16, pool_before=True),
                conv_layer(440, 8, 8, pool_before=True)),
        kernel_sizes=(3, 3, 3))


def superres_arch(size=40):
    """Replicated visible state (3 clamped + 3 free channels); 5x5 kernels,
    three 300-channel hidden maps, no pooling."""
    return ArchSpec(
        layers=(conv_layer(6, size, size, visible=True),
                conv_layer(300, size, size),
                conv_layer(300, size, size),
                conv_layer(300, size, size)),
        kernel_sizes=(5, 5, 5))
