"""Star-shaped multi-branch classifier.

Five input branches (one per descriptor) are concatenated along channels and
fed to four output branches (one per supervisor). Each output branch's second
FC features are shared with every other branch before the last two FC layers;
the shared copies carry values but no gradient.

Logit column 0 is "negative", column 1 is "positive".
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..descriptors import DESCRIPTOR_NAMES
from ..ensemble import SUPERVISORS
from ..errors import ShapeError
from .layers import BN_EPS, BN_MOMENTUM, BatchNorm1d, Conv1d, Linear, MaxPool1d, ReLU, softmax_xent


def _default_kernels():
    return {"xyz": 208, "lm": 208, "sh": 416, "t1w": 208, "wmparc": 208}


@dataclass
class StarConfig:
    in_channels: dict
    n: int = 100
    in_blocks: int = 12
    in_kernels: dict = field(default_factory=_default_kernels)
    in_ksize: int = 3
    # 1-based block ids followed by pooling
    in_pool_blocks: tuple = (4, 8)
    pool_size: int = 2
    out_blocks: int = 4
    out_kernels: int = 208
    out_ksize: int = 5
    out_pool_blocks: tuple = ()
    fc_width: int = 196
    n_classes: int = 2
    bn_momentum: float = BN_MOMENTUM
    bn_eps: float = BN_EPS

    def trunk_length(self) -> int:
        length = self.n
        for i in range(1, self.in_blocks + 1):
            if i in self.in_pool_blocks:
                length //= self.pool_size
        return length

    def branch_length(self) -> int:
        length = self.trunk_length()
        for i in range(1, self.out_blocks + 1):
            if i in self.out_pool_blocks:
                length //= self.pool_size
        return length

    def fc1_width(self) -> int:
        return self.out_kernels * self.branch_length()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["in_pool_blocks"] = list(self.in_pool_blocks)
        d["out_pool_blocks"] = list(self.out_pool_blocks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StarConfig":
        d = dict(d)
        d["in_pool_blocks"] = tuple(d.get("in_pool_blocks", (4, 8)))
        d["out_pool_blocks"] = tuple(d.get("out_pool_blocks", ()))
        return cls(**d)

    @classmethod
    def toy(cls, in_channels: dict, n: int = 100, blocks: int = 2, kernels: int = 16, fc_width: int = 64):
        kern = {name: kernels for name in DESCRIPTOR_NAMES}
        kern["sh"] = 2 * kernels
        return cls(
            in_channels=dict(in_channels),
            n=n,
            in_blocks=blocks,
            in_kernels=kern,
            out_blocks=blocks,
            out_kernels=kernels,
            fc_width=fc_width,
        )


class ConvBlock:
    """conv -> batchnorm -> ReLU -> optional max pool."""

    def __init__(self, in_ch, out_ch, ksize, pool, rng, dtype, cfg: StarConfig):
        self.layers = [
            Conv1d(in_ch, out_ch, ksize, rng, dtype),
            BatchNorm1d(out_ch, dtype, cfg.bn_momentum, cfg.bn_eps),
            ReLU(),
        ]
        if pool:
            self.layers.append(MaxPool1d(pool))

    def forward(self, x, train):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, d):
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d


class ConvBranch:
    def __init__(self, in_ch, kernels, n_blocks, ksize, pool_blocks, pool_size, rng, dtype, cfg):
        self.blocks = []
        ch = in_ch
        for i in range(1, n_blocks + 1):
            pool = pool_size if i in pool_blocks else 0
            self.blocks.append(ConvBlock(ch, kernels, ksize, pool, rng, dtype, cfg))
            ch = kernels
        self.out_ch = ch

    def forward(self, x, train):
        for b in self.blocks:
            x = b.forward(x, train)
        return x

    def backward(self, d):
        for b in reversed(self.blocks):
            d = b.backward(d)
        return d


class OutputHead:
    """Conv blocks -> flatten -> FC1 -> FC2 (shared) ... FC3 -> FC4."""

    def __init__(self, in_ch, rng, dtype, cfg: StarConfig):
        self.conv = ConvBranch(
            in_ch, cfg.out_kernels, cfg.out_blocks, cfg.out_ksize,
            cfg.out_pool_blocks, cfg.pool_size, rng, dtype, cfg,
        )
        w = cfg.fc_width
        self.fc1 = Linear(cfg.fc1_width(), w, rng, dtype)
        self.fc2 = Linear(w, w, rng, dtype)
        self.fc3 = Linear(len(SUPERVISORS) * w, w, rng, dtype)
        self.fc4 = Linear(w, cfg.n_classes, rng, dtype)
        self.r1, self.r2, self.r3 = ReLU(), ReLU(), ReLU()

    def forward_shared(self, trunk, train):
        h = self.conv.forward(trunk, train)
        self._conv_shape = h.shape
        h = h.reshape(h.shape[0], -1)
        h = self.r1.forward(self.fc1.forward(h, train))
        return self.r2.forward(self.fc2.forward(h, train))

    def forward_final(self, shared, train):
        h = self.r3.forward(self.fc3.forward(shared, train))
        return self.fc4.forward(h, train)

    def backward_final(self, dlogits):
        return self.fc3.backward(self.r3.backward(self.fc4.backward(dlogits)))

    def backward_shared(self, dh2):
        d = self.fc1.backward(self.r1.backward(self.fc2.backward(self.r2.backward(dh2))))
        return self.conv.backward(d.reshape(self._conv_shape))

    def layers(self):
        yield from _layers_of(self.conv)
        yield from (("fc1", self.fc1), ("fc2", self.fc2), ("fc3", self.fc3), ("fc4", self.fc4))


def _layers_of(branch: ConvBranch):
    for i, block in enumerate(branch.blocks):
        for layer in block.layers:
            if layer.params:
                kind = "conv" if isinstance(layer, Conv1d) else "bn"
                yield f"block{i}.{kind}", layer


class StarNetwork:
    def __init__(self, cfg: StarConfig, seed=0, dtype=np.float32):
        missing = set(DESCRIPTOR_NAMES) - set(cfg.in_channels)
        if missing:
            raise ShapeError(f"missing input channel counts for {sorted(missing)}")
        if cfg.trunk_length() < 1 or cfg.branch_length() < 1:
            raise ShapeError("pooling reduces the sequence length to zero")
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.inputs = {
            name: ConvBranch(
                cfg.in_channels[name], cfg.in_kernels[name], cfg.in_blocks, cfg.in_ksize,
                cfg.in_pool_blocks, cfg.pool_size, rng, dtype, cfg,
            )
            for name in DESCRIPTOR_NAMES
        }
        trunk_ch = sum(b.out_ch for b in self.inputs.values())
        self.heads = {sup: OutputHead(trunk_ch, rng, dtype, cfg) for sup in SUPERVISORS}

    # ------------------------------------------------------------ parameters

    def named_layers(self):
        for name, branch in self.inputs.items():
            for lname, layer in _layers_of(branch):
                yield f"in.{name}.{lname}", layer
        for sup, head in self.heads.items():
            for lname, layer in head.layers():
                yield f"out.{sup}.{lname}", layer

    def params(self) -> dict:
        return {f"{p}.{k}": v for p, layer in self.named_layers() for k, v in layer.params.items()}

    def grads(self) -> dict:
        return {f"{p}.{k}": v for p, layer in self.named_layers() for k, v in layer.grads.items()}

    def buffers(self) -> dict:
        return {
            f"{p}.{k}": v
            for p, layer in self.named_layers()
            for k, v in getattr(layer, "buffers", {}).items()
        }

    def state(self) -> dict:
        return {**self.params(), **self.buffers()}

    def load_state(self, state: dict):
        current = self.state()
        if set(current) != set(state):
            raise ShapeError("checkpoint tensors do not match the network")
        for k, arr in current.items():
            src = np.asarray(state[k])
            if src.shape != arr.shape:
                raise ShapeError(f"{k}: shape {src.shape} != {arr.shape}")
            arr[...] = src

    def zero_grad(self):
        for _, layer in self.named_layers():
            layer.zero_grad()

    # ------------------------------------------------------------ passes

    def forward(self, batch: dict, train=True, frozen_shared=None) -> dict:
        """``batch`` maps descriptor name -> ``(B, C, N)``; returns supervisor -> ``(B, 2)`` logits.

        ``frozen_shared`` (supervisor -> FC2 features) replaces the
        cross-branch copies entering each head's FC3 with fixed values, which
        makes the forward function match what :meth:`backward` differentiates.
        """
        feats = []
        for name in DESCRIPTOR_NAMES:
            x = np.asarray(batch[name], dtype=self.dtype)
            exp = (self.cfg.in_channels[name], self.cfg.n)
            if x.ndim != 3 or x.shape[1:] != exp:
                raise ShapeError(f"{name}: expected (B, {exp[0]}, {exp[1]}), got {x.shape}")
            feats.append(self.inputs[name].forward(x, train))
        self._split = np.cumsum([f.shape[1] for f in feats])[:-1]
        trunk = np.concatenate(feats, axis=1)
        shared = [self.heads[s].forward_shared(trunk, train) for s in SUPERVISORS]
        self.last_shared = dict(zip(SUPERVISORS, shared))
        self._width = shared[0].shape[1]
        if frozen_shared is None:
            concat = np.concatenate(shared, axis=1)
            return {s: self.heads[s].forward_final(concat, train) for s in SUPERVISORS}
        out = {}
        for i, s in enumerate(SUPERVISORS):
            parts = [shared[j] if j == i else frozen_shared[o] for j, o in enumerate(SUPERVISORS)]
            out[s] = self.heads[s].forward_final(np.concatenate(parts, axis=1), train)
        return out

    def backward(self, dlogits: dict):
        """Backpropagate per-branch logit gradients.

        Each head's FC3 sees every head's FC2 output, but only the slice of
        its own head is propagated back.
        """
        w = self._width
        dtrunk = None
        for i, s in enumerate(SUPERVISORS):
            if s not in dlogits:
                continue
            head = self.heads[s]
            dconcat = head.backward_final(np.asarray(dlogits[s], dtype=self.dtype))
            d = head.backward_shared(dconcat[:, i * w : (i + 1) * w])
            dtrunk = d if dtrunk is None else dtrunk + d
        if dtrunk is None:
            return
        for name, d in zip(DESCRIPTOR_NAMES, np.split(dtrunk, self._split, axis=1)):
            self.inputs[name].backward(d)

    def loss_and_backward(self, batch: dict, targets: dict, train=True, branches=SUPERVISORS):
        """Summed cross-entropy over ``branches``; gradients are accumulated."""
        logits = self.forward(batch, train)
        total, dlogits, per_branch = 0.0, {}, {}
        for s in branches:
            loss, g = softmax_xent(logits[s], targets[s])
            per_branch[s] = loss
            total += loss
            dlogits[s] = g
        self.backward(dlogits)
        return total, per_branch, logits

    def kink_signature(self):
        """ReLU masks and pooling argmaxes of the last forward pass."""
        sig = []
        for head in self.heads.values():
            sig.extend([head.r1._mask, head.r2._mask, head.r3._mask])
        for branch in [*self.inputs.values(), *(h.conv for h in self.heads.values())]:
            for block in branch.blocks:
                for layer in block.layers:
                    if isinstance(layer, ReLU):
                        sig.append(layer._mask)
                    elif isinstance(layer, MaxPool1d):
                        sig.append(layer._arg)
        return sig


def predict_labels(logits: dict) -> dict:
    """Binary prediction per supervisor; exact ties predict negative."""
    return {s: (lg[:, 1] > lg[:, 0]) for s, lg in logits.items()}
