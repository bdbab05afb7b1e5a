"""Run configuration: plain key=value sections, canonically serializable.

One file drives every pipeline stage.  Unknown sections or keys are errors
(config drift should fail loudly), values are merged over defaults, and the
canonical dump (sorted sections and keys) is written into the output
directory so two runs can be diffed.  The global seed feeds the generator,
the network and the MLP baseline at fixed offsets.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass

from .baselines import MLPConfig
from .errors import ConfigInvalid
from .ingest import SplitSpec
from .model import ModelConfig
from .synthgen import GenConfig

DEFAULTS: dict[str, dict[str, str]] = {
    "gen": {
        "n_events": "20000",
        "tick_size": "0.01",
        "initial_mid_ticks": "20000",
        "mid_sigma_ticks": "1.5",
        "signal_beta": "0.8",
        "signal_scale": "0.3",
        "imbalance_persistence": "0.995",
        "imbalance_sigma": "0.5",
        "mean_spread_ticks": "2.0",
        "spread_persistence": "0.97",
        "spread_sigma": "0.02",
        "spread_spike_prob": "0.0",
        "spread_spike_scale": "0.0",
        "level_spacing_ticks": "1",
        "size_mu": "4.0",
        "size_sigma": "0.3",
    },
    "ingest": {
        "w_norm": "2000",
        "epsilon_std": "1e-8",
        "train_fraction": "0.5",
        "validation_fraction": "0.25",
        "test_fraction": "0.25",
    },
    "model": {
        "T": "50",
        "quantiles": "0.25,0.5,0.75",
        "conv_channels": "16",
        "branch_hidden": "64",
        "head_hidden": "32",
        "learning_rate": "1e-3",
        "batch_size": "64",
        "max_epochs": "50",
        "patience": "5",
        "leaky_alpha": "0.01",
        "dtype": "float64",
        "sample_stride": "1",
    },
    "baselines": {
        "ar_order": "10",
        "mlp_hidden": "128,64",
        "mlp_learning_rate": "1e-3",
        "mlp_batch_size": "128",
        "mlp_max_epochs": "20",
        "mlp_patience": "3",
    },
    "combine": {
        "mode": "static",
        "rolling_window": "2000",
    },
    "run": {
        "horizons": "50,100,200",
        "seed": "0",
        "out_dir": "runs/default",
    },
}


@dataclass
class RunConfig:
    """Typed view over the merged key=value sections."""

    raw: dict[str, dict[str, str]]

    # -- typed accessors ------------------------------------------------

    def _get(self, section: str, key: str, conv):
        try:
            return conv(self.raw[section][key])
        except (ValueError, KeyError) as exc:
            raise ConfigInvalid(f"[{section}] {key}: {exc}") from exc

    @property
    def seed(self) -> int:
        return self._get("run", "seed", int)

    @property
    def out_dir(self) -> str:
        return self.raw["run"]["out_dir"]

    @property
    def horizons(self) -> tuple[int, ...]:
        ks = tuple(int(v) for v in self.raw["run"]["horizons"].split(","))
        if not ks or any(k < 1 for k in ks):
            raise ConfigInvalid(f"[run] horizons must be positive integers: {ks}")
        return ks

    def gen_config(self) -> GenConfig:
        g = self.raw["gen"]
        try:
            return GenConfig(
                n_events=int(g["n_events"]),
                tick_size=float(g["tick_size"]),
                initial_mid_ticks=int(g["initial_mid_ticks"]),
                mid_sigma_ticks=float(g["mid_sigma_ticks"]),
                signal_beta=float(g["signal_beta"]),
                signal_scale=float(g["signal_scale"]),
                imbalance_persistence=float(g["imbalance_persistence"]),
                imbalance_sigma=float(g["imbalance_sigma"]),
                mean_spread_ticks=float(g["mean_spread_ticks"]),
                spread_persistence=float(g["spread_persistence"]),
                spread_sigma=float(g["spread_sigma"]),
                spread_spike_prob=float(g["spread_spike_prob"]),
                spread_spike_scale=float(g["spread_spike_scale"]),
                level_spacing_ticks=int(g["level_spacing_ticks"]),
                size_mu=float(g["size_mu"]),
                size_sigma=float(g["size_sigma"]),
                seed=self.seed,
            )
        except ValueError as exc:
            raise ConfigInvalid(f"[gen]: {exc}") from exc

    @property
    def w_norm(self) -> int:
        return self._get("ingest", "w_norm", int)

    @property
    def epsilon_std(self) -> float:
        return self._get("ingest", "epsilon_std", float)

    def split_spec(self) -> SplitSpec:
        try:
            return SplitSpec(
                train=float(self.raw["ingest"]["train_fraction"]),
                validation=float(self.raw["ingest"]["validation_fraction"]),
                test=float(self.raw["ingest"]["test_fraction"]),
            )
        except ValueError as exc:
            raise ConfigInvalid(f"[ingest]: {exc}") from exc

    @property
    def sample_stride(self) -> int:
        stride = self._get("model", "sample_stride", int)
        if stride < 1:
            raise ConfigInvalid("[model] sample_stride must be >= 1")
        return stride

    def model_config(self, k: int) -> ModelConfig:
        m = self.raw["model"]
        try:
            return ModelConfig(
                T=int(m["T"]),
                quantiles=tuple(float(q) for q in m["quantiles"].split(",")),
                k=k,
                conv_channels=int(m["conv_channels"]),
                branch_hidden=int(m["branch_hidden"]),
                head_hidden=int(m["head_hidden"]),
                learning_rate=float(m["learning_rate"]),
                batch_size=int(m["batch_size"]),
                max_epochs=int(m["max_epochs"]),
                patience=int(m["patience"]),
                seed=self.seed + 1,
                leaky_alpha=float(m["leaky_alpha"]),
                dtype=m["dtype"],
            )
        except ValueError as exc:
            raise ConfigInvalid(f"[model]: {exc}") from exc

    @property
    def ar_order(self) -> int:
        return self._get("baselines", "ar_order", int)

    def mlp_config(self) -> MLPConfig:
        b = self.raw["baselines"]
        try:
            return MLPConfig(
                hidden=tuple(int(h) for h in b["mlp_hidden"].split(",")),
                learning_rate=float(b["mlp_learning_rate"]),
                batch_size=int(b["mlp_batch_size"]),
                max_epochs=int(b["mlp_max_epochs"]),
                patience=int(b["mlp_patience"]),
                seed=self.seed + 2,
            )
        except ValueError as exc:
            raise ConfigInvalid(f"[baselines]: {exc}") from exc

    @property
    def combine_mode(self) -> str:
        mode = self.raw["combine"]["mode"]
        if mode not in ("static", "rolling"):
            raise ConfigInvalid(f"[combine] mode must be static or rolling, got {mode!r}")
        return mode

    @property
    def rolling_window(self) -> int:
        w = self._get("combine", "rolling_window", int)
        if w < 1:
            raise ConfigInvalid("[combine] rolling_window must be >= 1")
        return w

    # -- serialization ---------------------------------------------------

    def to_canonical_text(self) -> str:
        out = io.StringIO()
        for section in sorted(self.raw):
            out.write(f"[{section}]\n")
            for key in sorted(self.raw[section]):
                out.write(f"{key} = {self.raw[section][key]}\n")
            out.write("\n")
        return out.getvalue()

    def validate(self) -> "RunConfig":
        """Force every typed accessor so bad values fail before any stage runs."""
        self.gen_config()
        self.split_spec()
        for k in self.horizons:
            self.model_config(k)
        self.mlp_config()
        _ = (self.w_norm, self.epsilon_std, self.sample_stride, self.ar_order)
        _ = (self.combine_mode, self.rolling_window)
        if self.w_norm < 2:
            raise ConfigInvalid("[ingest] w_norm must be >= 2")
        return self


def default_config() -> RunConfig:
    return RunConfig(raw={s: dict(kv) for s, kv in DEFAULTS.items()})


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
    except FileNotFoundError:
        raise
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigInvalid(f"{path}: {exc}") from exc
    raw = {s: dict(kv) for s, kv in DEFAULTS.items()}
    for section in parser.sections():
        if section not in raw:
            raise ConfigInvalid(f"{path}: unknown section [{section}]")
        for key, value in parser.items(section):
            if key not in raw[section]:
                raise ConfigInvalid(f"{path}: unknown key {key!r} in [{section}]")
            raw[section][key] = value
    return RunConfig(raw=raw).validate()
