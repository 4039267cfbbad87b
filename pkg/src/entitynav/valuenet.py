"""Social-attention state-value network with hand-rolled numpy forward and
backward passes.

Per entity i the network embeds row_i = [robot vector, entity observation,
one-hot type] into g_i, derives a pairwise interaction feature h_i and an
attention score alpha_i (conditioned on the mean-pooled embedding), forms the
crowd feature c = sum_i softmax(alpha)_i * h_i, and reads the state value
from [robot vector, c]. All activations are ReLU except the two scalar
output heads, which are linear.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import ENTITY_DIM, ROBOT_DIM, TYPE_DIM, JointState, one_hot

HIDDEN_EMBED = (300, 200)
HIDDEN_PAIR = (200, 100)
HIDDEN_ATTENTION = (200, 200)
HIDDEN_VALUE = (300, 200, 200)

CHECKPOINT_MAGIC = b"ENAVVNET"
CHECKPOINT_VERSION = 1
FLAG_ENTITY_TYPE = 1
_N_ARRAYS = 22  # (W, b) for 2 + 2 + 3 + 4 layers


class CheckpointError(RuntimeError):
    pass


class TrainingDivergenceError(RuntimeError):
    pass


def input_width(include_entity_type: bool) -> int:
    return ROBOT_DIM + ENTITY_DIM + (TYPE_DIM if include_entity_type else 0)


@dataclass
class NetworkInput:
    """Network-ready view of one joint state: the 6-dim robot vector and one
    row per entity (width 17 with the type one-hot, 13 without)."""

    robot: np.ndarray
    rows: np.ndarray

    @property
    def n(self) -> int:
        return self.rows.shape[0]


def joint_state_to_input(state: JointState, include_entity_type: bool) -> NetworkInput:
    robot = state.robot.as_array()
    width = input_width(include_entity_type)
    rows = np.empty((state.n, width))
    for i, ent in enumerate(state.entities):
        rows[i, :ROBOT_DIM] = robot
        rows[i, ROBOT_DIM:ROBOT_DIM + ENTITY_DIM] = ent.numeric()
        if include_entity_type:
            rows[i, ROBOT_DIM + ENTITY_DIM:] = one_hot(ent.entity_type)
    return NetworkInput(robot=robot, rows=rows)


def _init_mlp(rng, sizes):
    """Uniform fan-in init, W ~ U(+-1/sqrt(fan_in)), zero biases. Inputs are
    raw meter-scale features; a hotter (He) gain makes the four-MLP chain
    diverge under the prescribed SGD learning rates."""
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        params.append([rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                       np.zeros(fan_out)])
    return params


def _mlp_forward(params, x, last_linear):
    caches = []
    h = x
    for i, (w, b) in enumerate(params):
        z = h @ w + b
        caches.append((h, z))
        if last_linear and i == len(params) - 1:
            h = z
        else:
            h = np.maximum(z, 0.0)
    return h, caches


def _mlp_backward(params, caches, dout, last_linear):
    grads = [None] * len(params)
    dh = dout
    for i in range(len(params) - 1, -1, -1):
        x, z = caches[i]
        if last_linear and i == len(params) - 1:
            dz = dh
        else:
            dz = dh * (z > 0.0)
        grads[i] = [x.T @ dz, dz.sum(axis=0)]
        dh = dz @ params[i][0].T
    return dh, grads


class ValueNetwork:
    """The value function V with its own SGD training step."""

    def __init__(self, include_entity_type: bool = True, seed: int = 0,
                 hidden_embed=HIDDEN_EMBED, hidden_pair=HIDDEN_PAIR,
                 hidden_attention=HIDDEN_ATTENTION, hidden_value=HIDDEN_VALUE):
        self.include_entity_type = include_entity_type
        self.hidden_embed = tuple(hidden_embed)
        self.hidden_pair = tuple(hidden_pair)
        self.hidden_attention = tuple(hidden_attention)
        self.hidden_value = tuple(hidden_value)
        in_dim = input_width(include_entity_type)
        g_out = self.hidden_embed[-1]
        h_out = self.hidden_pair[-1]
        rng = np.random.default_rng(seed)
        self.params = {
            "embed": _init_mlp(rng, [in_dim, *self.hidden_embed]),
            "pair": _init_mlp(rng, [g_out, *self.hidden_pair]),
            "attention": _init_mlp(rng, [2 * g_out, *self.hidden_attention, 1]),
            "value": _init_mlp(rng, [ROBOT_DIM + h_out, *self.hidden_value, 1]),
        }
        self.eval_count = 0  # number of state evaluations served

    # -- parameter plumbing ------------------------------------------------

    def _ordered_params(self):
        for name in ("embed", "pair", "attention", "value"):
            for layer in self.params[name]:
                yield layer

    def copy(self) -> ValueNetwork:
        clone = ValueNetwork.__new__(ValueNetwork)
        clone.include_entity_type = self.include_entity_type
        clone.hidden_embed = self.hidden_embed
        clone.hidden_pair = self.hidden_pair
        clone.hidden_attention = self.hidden_attention
        clone.hidden_value = self.hidden_value
        clone.params = {name: [[w.copy(), b.copy()] for w, b in layers]
                        for name, layers in self.params.items()}
        clone.eval_count = 0
        return clone

    def get_flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b])
                               for w, b in self._ordered_params()])

    def set_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for layer in self._ordered_params():
            for k in range(2):
                arr = layer[k]
                layer[k] = flat[offset:offset + arr.size].reshape(arr.shape).copy()
                offset += arr.size
        if offset != flat.size:
            raise ValueError(f"flat vector size {flat.size} != {offset}")

    # -- forward -----------------------------------------------------------

    def forward_batch(self, robot: np.ndarray, rows: np.ndarray,
                      need_cache: bool = False):
        """Evaluate a batch of states that share an entity count.

        robot: (B, 6); rows: (B, n, D). Returns (values (B,),
        attention (B, n), cache or None).
        """
        batch, n = rows.shape[0], rows.shape[1]
        self.eval_count += batch
        h_out = self.hidden_pair[-1]
        if n == 0:
            crowd = np.zeros((batch, h_out))
            v_in = np.concatenate([robot, crowd], axis=1)
            v, v_cache = _mlp_forward(self.params["value"], v_in, True)
            cache = {"n": 0, "batch": batch, "v_cache": v_cache}
            return v[:, 0], np.zeros((batch, 0)), (cache if need_cache else None)

        flat = rows.reshape(batch * n, rows.shape[2])
        g, g_cache = _mlp_forward(self.params["embed"], flat, False)
        h, h_cache = _mlp_forward(self.params["pair"], g, False)
        g_mean = g.reshape(batch, n, -1).mean(axis=1)
        a_in = np.concatenate([g, np.repeat(g_mean, n, axis=0)], axis=1)
        scores, a_cache = _mlp_forward(self.params["attention"], a_in, True)
        scores = scores.reshape(batch, n)
        shifted = scores - scores.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        weights = exp / exp.sum(axis=1, keepdims=True)
        h_grouped = h.reshape(batch, n, -1)
        crowd = np.einsum("bn,bnh->bh", weights, h_grouped)
        v_in = np.concatenate([robot, crowd], axis=1)
        v, v_cache = _mlp_forward(self.params["value"], v_in, True)
        cache = None
        if need_cache:
            cache = {"n": n, "batch": batch, "g_cache": g_cache,
                     "h_cache": h_cache, "a_cache": a_cache,
                     "v_cache": v_cache, "weights": weights,
                     "h_grouped": h_grouped}
        return v[:, 0], weights, cache

    def forward(self, inp: NetworkInput) -> tuple[float, np.ndarray]:
        """Single-state evaluation: (value, attention weights)."""
        values, weights, _ = self.forward_batch(inp.robot[None, :],
                                                inp.rows[None, :, :])
        return float(values[0]), weights[0]

    def value(self, inp: NetworkInput) -> float:
        return self.forward(inp)[0]

    # -- backward ----------------------------------------------------------

    def _backward_batch(self, cache, dv: np.ndarray):
        """Gradients of sum_b dv_b * v_b with respect to all parameters."""
        grads = {name: [[np.zeros_like(w), np.zeros_like(b)]
                        for w, b in layers]
                 for name, layers in self.params.items()}
        dv_col = dv[:, None]
        d_vin, v_grads = _mlp_backward(self.params["value"],
                                       cache["v_cache"], dv_col, True)
        grads["value"] = v_grads
        n = cache["n"]
        if n == 0:
            return grads
        batch = cache["batch"]
        weights = cache["weights"]
        h_grouped = cache["h_grouped"]
        d_crowd = d_vin[:, ROBOT_DIM:]

        d_weights = np.einsum("bh,bnh->bn", d_crowd, h_grouped)
        d_h = (weights[:, :, None] * d_crowd[:, None, :]).reshape(batch * n, -1)
        # softmax backward
        inner = (weights * d_weights).sum(axis=1, keepdims=True)
        d_scores = weights * (d_weights - inner)
        d_ain, a_grads = _mlp_backward(self.params["attention"],
                                       cache["a_cache"],
                                       d_scores.reshape(batch * n, 1), True)
        grads["attention"] = a_grads
        g_out = self.hidden_embed[-1]
        d_g = d_ain[:, :g_out]
        # mean-pool path: every alpha_i sees g_mean, which sees every g_k
        d_gmean = d_ain[:, g_out:].reshape(batch, n, -1).sum(axis=1) / n
        d_g = d_g + np.repeat(d_gmean, n, axis=0)
        d_g_pair, h_grads = _mlp_backward(self.params["pair"],
                                          cache["h_cache"], d_h, False)
        grads["pair"] = h_grads
        d_g = d_g + d_g_pair
        _, g_grads = _mlp_backward(self.params["embed"], cache["g_cache"],
                                   d_g, False)
        grads["embed"] = g_grads
        return grads

    def loss_and_gradients(self, batch: list[tuple[NetworkInput, float]]):
        """Mean squared error over the batch and its parameter gradients.
        Inputs with different entity counts are grouped internally."""
        total = len(batch)
        groups: dict[int, list[int]] = {}
        for idx, (inp, _) in enumerate(batch):
            groups.setdefault(inp.n, []).append(idx)
        loss = 0.0
        grads_total = None
        for n, indices in groups.items():
            robot = np.stack([batch[i][0].robot for i in indices])
            rows = np.stack([batch[i][0].rows for i in indices])
            targets = np.array([batch[i][1] for i in indices])
            values, _, cache = self.forward_batch(robot, rows, need_cache=True)
            err = values - targets
            loss += float(err @ err)
            grads = self._backward_batch(cache, 2.0 * err / total)
            if grads_total is None:
                grads_total = grads
            else:
                for name in grads_total:
                    for la, lb in zip(grads_total[name], grads[name]):
                        la[0] += lb[0]
                        la[1] += lb[1]
        return loss / total, grads_total

    def train_batch(self, batch: list[tuple[NetworkInput, float]],
                    learning_rate: float) -> float:
        """One SGD step on the batch MSE; returns the pre-step loss.
        Weights stay untouched if the loss or any gradient is non-finite."""
        if not batch:
            raise ValueError("train_batch requires a nonempty batch")
        loss, grads = self.loss_and_gradients(batch)
        if not np.isfinite(loss):
            raise TrainingDivergenceError(f"non-finite loss {loss}")
        for name in grads:
            for gw, gb in grads[name]:
                if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
                    raise TrainingDivergenceError(f"non-finite gradient in {name}")
        for name in self.params:
            for layer, grad in zip(self.params[name], grads[name]):
                layer[0] -= learning_rate * grad[0]
                layer[1] -= learning_rate * grad[1]
        return loss


# -- checkpoints -----------------------------------------------------------

def save_checkpoint(net: ValueNetwork, path, reward_config_hash: str = "") -> None:
    """Binary checkpoint: magic, version, flag bits, reward-config hash,
    shape table, then float64 little-endian weight blobs in layer order."""
    hash_bytes = bytes.fromhex(reward_config_hash) if reward_config_hash else b"\x00" * 32
    if len(hash_bytes) != 32:
        raise CheckpointError("reward config hash must be 32 bytes (sha256)")
    flags = FLAG_ENTITY_TYPE if net.include_entity_type else 0
    arrays = []
    for w, b in net._ordered_params():
        arrays.append(np.ascontiguousarray(w, dtype="<f8"))
        arrays.append(np.ascontiguousarray(b, dtype="<f8"))
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, flags))
        fh.write(hash_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for arr in arrays:
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for arr in arrays:
            fh.write(arr.tobytes())


def load_checkpoint(path, expect_entity_type: bool | None = None) -> ValueNetwork:
    """Inverse of save_checkpoint; the architecture is rebuilt from the shape
    table so reduced-size networks round-trip too."""
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        if blob[:8] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad magic {blob[:8]!r} in {path}")
        version, flags = struct.unpack_from("<II", blob, 8)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        hash_bytes = blob[16:48]
        (n_arrays,) = struct.unpack_from("<I", blob, 48)
        if n_arrays != _N_ARRAYS:
            raise CheckpointError(
                f"expected {_N_ARRAYS} weight arrays, found {n_arrays}")
        offset = 52
        shapes = []
        for _ in range(n_arrays):
            (ndim,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            shape = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            shapes.append(shape)
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(blob, dtype="<f8", count=count,
                                offset=offset).reshape(shape).copy()
            offset += count * 8
            arrays.append(arr)
        if offset != len(blob):
            raise CheckpointError(f"{len(blob) - offset} trailing bytes in {path}")
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc

    include_entity_type = bool(flags & FLAG_ENTITY_TYPE)
    if expect_entity_type is not None and include_entity_type != expect_entity_type:
        raise CheckpointError(
            f"checkpoint include_entity_type={include_entity_type} does not "
            f"match run config {expect_entity_type}")

    weight_shapes = shapes[0::2]
    hidden_embed = tuple(s[1] for s in weight_shapes[0:2])
    hidden_pair = tuple(s[1] for s in weight_shapes[2:4])
    hidden_attention = tuple(s[1] for s in weight_shapes[4:6])
    hidden_value = tuple(s[1] for s in weight_shapes[7:10])
    net = ValueNetwork(include_entity_type=include_entity_type,
                       hidden_embed=hidden_embed, hidden_pair=hidden_pair,
                       hidden_attention=hidden_attention,
                       hidden_value=hidden_value)
    expected = [arr.shape for layer in net._ordered_params() for arr in layer]
    got = [tuple(s) for s in shapes]
    if [tuple(s) for s in expected] != got:
        raise CheckpointError(
            f"shape table mismatch: expected {expected}, found {got}")
    it = iter(arrays)
    for layer in net._ordered_params():
        layer[0] = next(it)
        layer[1] = next(it)
    net.reward_config_hash = hash_bytes.hex()
    return net
