"""Run configuration: one flat, JSON-serializable record of every tunable."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .descriptors import DESCRIPTOR_NAMES, DescriptorConfig
from .errors import InvalidInputError
from .io import config_hash, read_json
from .nn.star import StarConfig
from .sampler import DEFAULT_RATIOS
from .supervisors import DEFAULT_LOOP_THRESHOLD, DEFAULT_VENTRICLE_RADIUS
from .train import TrainConfig
from .volume import DEFAULT_LMAX, DEFAULT_SHELLS, sh_count

MAX_EPOCHS = 250

_TUPLE_FIELDS = ("shells", "region_table", "in_pool_blocks", "ratios", "ablate")


@dataclass
class RunConfig:
    # descriptors
    n: int = 100
    k: int = 20
    step: float = 1.0
    lmax: int = DEFAULT_LMAX
    shells: tuple = DEFAULT_SHELLS
    region_table: tuple = ()
    landmarks_on_full: bool = False
    # supervisors
    loop_threshold: float = DEFAULT_LOOP_THRESHOLD
    ventricle_radius: float = DEFAULT_VENTRICLE_RADIUS
    # network
    in_blocks: int = 12
    in_kernels: int = 208
    sh_kernels: int = 416
    in_ksize: int = 3
    in_pool_blocks: tuple = (4, 8)
    out_blocks: int = 4
    out_kernels: int = 208
    out_ksize: int = 5
    fc_width: int = 196
    # training
    lr: float = 3e-5
    epochs: int = MAX_EPOCHS
    train_samples: int = 10000
    val_samples: int = 4000
    batch_size: int = 32
    ratios: tuple = DEFAULT_RATIOS
    seed: int = 0
    ablate: tuple = ()
    realizations: int = 5

    def __post_init__(self):
        for name in _TUPLE_FIELDS:
            setattr(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise InvalidInputError(f"config: {msg}")

        need(self.n >= 1 and self.k >= 2, "n must be >= 1 and k >= 2")
        need(self.step > 0, "step must be positive")
        need(self.lmax >= 0 and self.lmax % 2 == 0, "lmax must be a nonnegative even integer")
        need(len(self.shells) >= 1 and all(b > 0 for b in self.shells), "shells must be positive b-values")
        need(len(set(self.region_table)) == len(self.region_table), "region_table has duplicates")
        need(self.loop_threshold > 0 and self.ventricle_radius >= 0, "bad AIF parameters")
        need(min(self.in_blocks, self.out_blocks) >= 1, "block counts must be >= 1")
        need(min(self.in_kernels, self.sh_kernels, self.out_kernels, self.fc_width) >= 1, "widths must be >= 1")
        need(self.in_ksize % 2 == 1 and self.out_ksize % 2 == 1, "kernel sizes must be odd")
        need(all(1 <= b <= self.in_blocks for b in self.in_pool_blocks), "pool blocks must be 1-based block ids")
        need(self.lr > 0, "lr must be positive")
        need(1 <= self.epochs <= MAX_EPOCHS, f"epochs must be in [1, {MAX_EPOCHS}]")
        need(self.train_samples >= 1 and self.val_samples >= 0, "bad epoch sample counts")
        need(self.batch_size >= 1, "batch_size must be >= 1")
        need(
            len(self.ratios) == 3 and min(self.ratios) >= 0 and abs(sum(self.ratios) - 1) < 1e-9,
            "ratios must be three nonnegative values summing to 1",
        )
        need(set(self.ablate) <= set(DESCRIPTOR_NAMES), f"ablate must be a subset of {DESCRIPTOR_NAMES}")
        need(self.realizations >= 1, "realizations must be >= 1")

    # ------------------------------------------------------------ conversion

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"config: unknown keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(read_json(path))

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in _TUPLE_FIELDS:
            d[name] = list(d[name])
        return d

    def hash(self) -> str:
        return config_hash(self.to_dict())

    def descriptor_config(self) -> DescriptorConfig:
        return DescriptorConfig(self.n, self.k, self.step, self.region_table, self.landmarks_on_full)

    def sh_channels(self) -> int:
        return len(self.shells) * sh_count(self.lmax)

    def in_channels(self) -> dict:
        return {
            "xyz": 3,
            "lm": self.k,
            "sh": self.sh_channels(),
            "t1w": 1,
            "wmparc": len(self.region_table),
        }

    def star_config(self) -> StarConfig:
        kernels = {name: self.in_kernels for name in DESCRIPTOR_NAMES}
        kernels["sh"] = self.sh_kernels
        return StarConfig(
            in_channels=self.in_channels(),
            n=self.n,
            in_blocks=self.in_blocks,
            in_kernels=kernels,
            in_ksize=self.in_ksize,
            in_pool_blocks=self.in_pool_blocks,
            out_blocks=self.out_blocks,
            out_kernels=self.out_kernels,
            out_ksize=self.out_ksize,
            fc_width=self.fc_width,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            train_samples=self.train_samples,
            val_samples=self.val_samples,
            batch_size=self.batch_size,
            lr=self.lr,
            seed=self.seed,
            ablate=self.ablate,
        )
