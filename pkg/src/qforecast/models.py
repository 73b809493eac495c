"""Forecasting models, implemented from first principles in numpy.

``Seq2SeqForecaster`` is a stacked two-layer LSTM encoder whose final
states initialize a two-layer LSTM decoder; the encoder's last top-layer
hidden state is repeated k times as the decoder input, and a dense head
maps each decoder step to a feature row.  Training is Adam on Huber loss
over stride-1 sliding windows (input window i..i+k-1, target i+k..i+2k-1)
in double precision, which keeps finite-difference gradient checks tight.

``RateForecaster`` is the one-layer LSTM that predicts per-fine-slot
query counts for template size estimation, and ``history_forecast`` is
the replay baseline.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import TimedWorkload, TimedQuery, pack_arrays, unpack_arrays
from .features import FeatureMap, FeatureSchema, fit_standardization, standardize, destandardize


class ModelError(Exception):
    pass


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# LSTM layer
# ---------------------------------------------------------------------------

class LstmLayer:
    """One LSTM layer over batched sequences, with exact BPTT.

    Gate order in the stacked weight matrices is input, forget, cell
    candidate, output.  Shapes: wx (input_dim, 4H), wh (H, 4H), b (4H,).
    """

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.RandomState):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        scale = 1.0 / np.sqrt(max(input_dim, 1))
        self.wx = rng.uniform(-scale, scale, (input_dim, 4 * hidden_dim))
        hscale = 1.0 / np.sqrt(hidden_dim)
        self.wh = rng.uniform(-hscale, hscale, (hidden_dim, 4 * hidden_dim))
        self.b = np.zeros(4 * hidden_dim)
        # forget-gate bias starts positive so memory persists early in training
        self.b[hidden_dim:2 * hidden_dim] = 1.0
        self._cache = None

    def params(self, prefix: str) -> list:
        return [(f"{prefix}.wx", self.wx), (f"{prefix}.wh", self.wh), (f"{prefix}.b", self.b)]

    def forward(self, x: np.ndarray, h0: Optional[np.ndarray] = None,
                c0: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """x: (B, T, input_dim) -> hidden sequence (B, T, H) and final (h, c)."""
        if x.ndim != 3 or x.shape[2] != self.input_dim:
            raise ModelError(f"expected input width {self.input_dim}, got {x.shape}")
        batch, steps, _ = x.shape
        hdim = self.hidden_dim
        h = np.zeros((batch, hdim)) if h0 is None else h0
        c = np.zeros((batch, hdim)) if c0 is None else c0
        hs = np.empty((batch, steps, hdim))
        cache = {"x": x, "h0": h.copy(), "c0": c.copy(), "i": [], "f": [], "g": [],
                 "o": [], "c": [], "c_prev": [], "h_prev": [], "tanh_c": []}
        for t in range(steps):
            gates = x[:, t, :] @ self.wx + h @ self.wh + self.b
            i = _sigmoid(gates[:, :hdim])
            f = _sigmoid(gates[:, hdim:2 * hdim])
            g = np.tanh(gates[:, 2 * hdim:3 * hdim])
            o = _sigmoid(gates[:, 3 * hdim:])
            cache["c_prev"].append(c)
            cache["h_prev"].append(h)
            c = f * c + i * g
            tanh_c = np.tanh(c)
            h = o * tanh_c
            for key, val in (("i", i), ("f", f), ("g", g), ("o", o),
                             ("c", c), ("tanh_c", tanh_c)):
                cache[key].append(val)
            hs[:, t, :] = h
        self._cache = cache
        return hs, h, c

    def backward(self, dhs: Optional[np.ndarray], dh_final: Optional[np.ndarray] = None,
                 dc_final: Optional[np.ndarray] = None):
        """Backprop through the cached forward pass.

        dhs: per-step gradients on the hidden outputs (may be None);
        dh_final/dc_final: extra gradients on the final states.  Returns
        (dx, grads dict, dh0, dc0).
        """
        cache = self._cache
        if cache is None:
            raise ModelError("backward called before forward")
        x = cache["x"]
        batch, steps, _ = x.shape
        hdim = self.hidden_dim
        dwx = np.zeros_like(self.wx)
        dwh = np.zeros_like(self.wh)
        db = np.zeros_like(self.b)
        dx = np.zeros_like(x)
        dh_next = np.zeros((batch, hdim)) if dh_final is None else dh_final.copy()
        dc_next = np.zeros((batch, hdim)) if dc_final is None else dc_final.copy()
        for t in range(steps - 1, -1, -1):
            dh = dh_next + (dhs[:, t, :] if dhs is not None else 0.0)
            i, f, g, o = cache["i"][t], cache["f"][t], cache["g"][t], cache["o"][t]
            tanh_c = cache["tanh_c"][t]
            c_prev = cache["c_prev"][t]
            dc = dc_next + dh * o * (1.0 - tanh_c ** 2)
            do = dh * tanh_c * o * (1.0 - o)
            di = dc * g * i * (1.0 - i)
            df = dc * c_prev * f * (1.0 - f)
            dg = dc * i * (1.0 - g ** 2)
            dgates = np.concatenate([di, df, dg, do], axis=1)
            dwx += x[:, t, :].T @ dgates
            dwh += cache["h_prev"][t].T @ dgates
            db += dgates.sum(axis=0)
            dx[:, t, :] = dgates @ self.wx.T
            dh_next = dgates @ self.wh.T
            dc_next = dc * f
        grads = {"wx": dwx, "wh": dwh, "b": db}
        return dx, grads, dh_next, dc_next

    def grow_input(self, new_dim: int, rng: np.random.RandomState) -> None:
        """Append rows for new input slots, preserving trained weights."""
        if new_dim < self.input_dim:
            raise ModelError("cannot shrink an LSTM input")
        if new_dim == self.input_dim:
            return
        extra = rng.uniform(-0.01, 0.01, (new_dim - self.input_dim, 4 * self.hidden_dim))
        self.wx = np.vstack([self.wx, extra])
        self.input_dim = new_dim


def huber_loss(pred: np.ndarray, truth: np.ndarray, delta: float = 1.0):
    """Mean Huber loss and its gradient w.r.t. pred."""
    if pred.shape != truth.shape:
        raise ModelError(f"shape mismatch {pred.shape} vs {truth.shape}")
    err = pred - truth
    abs_err = np.abs(err)
    quad = abs_err <= delta
    loss = np.where(quad, 0.5 * err ** 2, delta * (abs_err - 0.5 * delta))
    grad = np.where(quad, err, delta * np.sign(err)) / err.size
    return float(loss.mean()), grad


class AdamOptimizer:
    def __init__(self, params: list, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params          # list of (name, array) views
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {name: np.zeros_like(p) for name, p in params}
        self.v = {name: np.zeros_like(p) for name, p in params}
        self.t = 0

    def step(self, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params:
            g = grads[name]
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1 ** self.t)
            v_hat = self.v[name] / (1 - b2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# Encoder-decoder window forecaster
# ---------------------------------------------------------------------------

@dataclass
class TrainStats:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    epochs: int = 0
    fine_tune_epochs: list = field(default_factory=list)


class Seq2SeqForecaster:
    """Two-layer LSTM encoder/decoder predicting the next k feature rows."""

    def __init__(self, schema: FeatureSchema, k: int, hidden: int, seed: int):
        self.schema = schema
        self.k = k
        self.hidden = hidden
        self.seed = seed
        width = schema.width
        rng = np.random.RandomState(seed)
        self.enc1 = LstmLayer(width, hidden, rng)
        self.enc2 = LstmLayer(hidden, hidden, rng)
        self.dec1 = LstmLayer(hidden, hidden, rng)
        self.dec2 = LstmLayer(hidden, hidden, rng)
        scale = 1.0 / np.sqrt(hidden)
        self.wd = rng.uniform(-scale, scale, (hidden, width))
        self.bd = np.zeros(width)
        self.stats = TrainStats()

    # -- parameter plumbing --------------------------------------------------

    def params(self) -> list:
        out = []
        for prefix, layer in (("enc1", self.enc1), ("enc2", self.enc2),
                              ("dec1", self.dec1), ("dec2", self.dec2)):
            out.extend(layer.params(prefix))
        out.append(("dense.w", self.wd))
        out.append(("dense.b", self.bd))
        return out

    def check_finite(self) -> None:
        for name, p in self.params():
            if not np.all(np.isfinite(p)):
                raise ModelError(f"non-finite values in {name}")

    # -- forward / backward ---------------------------------------------------

    def forward(self, window: np.ndarray) -> np.ndarray:
        """window: (B, k, width) standardized -> (B, k, width) predictions."""
        if window.ndim == 2:
            window = window[None, :, :]
        if window.shape[1] != self.k:
            raise ModelError(f"expected window length {self.k}, got {window.shape[1]}")
        hs1, h1, c1 = self.enc1.forward(window)
        _, h2, c2 = self.enc2.forward(hs1)
        repeated = np.repeat(h2[:, None, :], self.k, axis=1)
        d1, _, _ = self.dec1.forward(repeated, h1, c1)
        d2, _, _ = self.dec2.forward(d1, h2, c2)
        self._last_d2 = d2
        return d2 @ self.wd + self.bd

    def backward(self, d_out: np.ndarray, d2: np.ndarray) -> dict:
        """Backprop given loss gradient on the output and cached activations."""
        grads = {"dense.w": np.einsum("bth,bto->ho", d2, d_out),
                 "dense.b": d_out.sum(axis=(0, 1))}
        dd2 = d_out @ self.wd.T
        dd1, g_dec2, dh2_dec, dc2_dec = self.dec2.backward(dd2)
        drep, g_dec1, dh1_dec, dc1_dec = self.dec1.backward(dd1)
        # The repeated encoder state fans out to every decoder step.
        dh2 = drep.sum(axis=1) + dh2_dec
        dhs1, g_enc2, _, _ = self.enc2.backward(None, dh_final=dh2, dc_final=dc2_dec)
        _, g_enc1, _, _ = self.enc1.backward(dhs1, dh_final=dh1_dec, dc_final=dc1_dec)
        for prefix, layer_grads in (("enc1", g_enc1), ("enc2", g_enc2),
                                    ("dec1", g_dec1), ("dec2", g_dec2)):
            for key, val in layer_grads.items():
                grads[f"{prefix}.{key}"] = val
        return grads

    def loss_and_grads(self, window: np.ndarray, target: np.ndarray):
        pred = self.forward(window)
        loss, d_out = huber_loss(pred, target)
        grads = self.backward(d_out, self._last_d2)
        return loss, grads

    def predict(self, recent_rows: np.ndarray) -> np.ndarray:
        """Standardize the trailing window, forecast k rows, destandardize."""
        window = standardize(self.schema, recent_rows[-self.k:])
        out = self.forward(window[None, :, :])[0]
        return destandardize(self.schema, out)

    # -- serialization ---------------------------------------------------------

    def to_bytes(self, extra: Optional[dict] = None) -> bytes:
        names = [name for name, _ in self.params()]
        header = {
            "kind": "seq2seq",
            "k": self.k,
            "hidden": self.hidden,
            "seed": self.seed,
            "names": names,
            "schema": self.schema.to_json(),
            "schema_hash": self.schema.fingerprint(),
            "stats": {"train_loss": self.stats.train_loss,
                      "val_loss": self.stats.val_loss,
                      "epochs": self.stats.epochs,
                      "fine_tune_epochs": self.stats.fine_tune_epochs},
            "extra": extra or {},
        }
        return pack_arrays(header, [p for _, p in self.params()])

    @classmethod
    def from_bytes(cls, blob: bytes) -> tuple["Seq2SeqForecaster", dict]:
        header, arrays = unpack_arrays(blob)
        if header["kind"] != "seq2seq":
            raise ModelError(f"not a forecaster blob: {header['kind']}")
        schema = FeatureSchema.from_json(header["schema"])
        model = cls(schema, header["k"], header["hidden"], header["seed"])
        for (name, param), stored in zip(model.params(), arrays):
            if param.shape != stored.shape:
                raise ModelError(f"shape mismatch for {name}")
            param[...] = stored
        stats = header.get("stats", {})
        model.stats = TrainStats(stats.get("train_loss", []), stats.get("val_loss", []),
                                 stats.get("epochs", 0), stats.get("fine_tune_epochs", []))
        return model, header.get("extra", {})


def sliding_windows(rows: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Stride-1 window pairs: inputs (n, k, w) and targets (n, k, w)."""
    n = rows.shape[0] - 2 * k + 1
    if n <= 0:
        raise ModelError(f"need at least {2 * k} rows for k={k}, got {rows.shape[0]}")
    inputs = np.stack([rows[i:i + k] for i in range(n)])
    targets = np.stack([rows[i + k:i + 2 * k] for i in range(n)])
    return inputs, targets


def _run_epochs(model: Seq2SeqForecaster, inputs, targets, val_inputs, val_targets,
                cfg, rng: np.random.RandomState, max_epochs: int,
                min_improvement: float = 1e-4, patience: int = 3) -> int:
    """Adam training loop with per-epoch lr decay and early stopping."""
    params = model.params()
    optimizer = AdamOptimizer(params, cfg.lr)
    n = inputs.shape[0]
    batch_size = max(1, min(cfg.batch_size, n // 4 if n >= 4 else n))
    best_val = np.inf
    stale = 0
    epochs_run = 0
    for epoch in range(max_epochs):
        optimizer.lr = cfg.lr * (cfg.lr_decay ** epoch)
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            loss, grads = model.loss_and_grads(inputs[batch], targets[batch])
            named = {name: grads[name] for name, _ in params}
            optimizer.step(named)
            epoch_loss += loss * len(batch)
        model.check_finite()
        epoch_loss /= n
        model.stats.train_loss.append(epoch_loss)
        epochs_run = epoch + 1
        if val_inputs is not None and len(val_inputs):
            val_pred = model.forward(val_inputs)
            val_loss, _ = huber_loss(val_pred, val_targets)
        else:
            val_loss = epoch_loss
        model.stats.val_loss.append(val_loss)
        if val_loss < best_val - min_improvement:
            best_val = val_loss
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    model.stats.epochs += epochs_run
    return epochs_run


def train_forecaster(fmap: FeatureMap, cfg, seed: Optional[int] = None) -> Seq2SeqForecaster:
    """Train an encoder-decoder forecaster on one feature map.

    The last tenth of the window pairs is held out for early stopping;
    standardization statistics come from the training rows and live in
    the schema for the inverse transform.
    """
    k = cfg.k
    if len(fmap.rows) < 2 * k + 1:
        raise ModelError(f"need at least {2 * k + 1} rows to train with k={k}")
    seed = cfg.seed if seed is None else seed
    # row 0 carries synthetic zero deltas and a zero gap; keep it out of the
    # slot statistics so constant-cadence slots stay constant
    fit_standardization(fmap.schema, fmap.rows[1:] if len(fmap.rows) > 1 else fmap.rows)
    rows = standardize(fmap.schema, fmap.rows)
    inputs, targets = sliding_windows(rows, k)
    n = inputs.shape[0]
    rng = np.random.RandomState(seed)
    n_val = max(1, n // 10) if n > 4 else 0
    if n_val:
        # a seeded random subset judges convergence; the anchor-adjacent
        # windows stay trainable so forecasts start in-distribution
        val_idx = rng.choice(n, size=n_val, replace=False)
        mask = np.ones(n, dtype=bool)
        mask[val_idx] = False
        val_inputs, val_targets = inputs[~mask], targets[~mask]
        inputs, targets = inputs[mask], targets[mask]
    else:
        val_inputs = val_targets = None
    model = Seq2SeqForecaster(fmap.schema, k, cfg.effective_hidden, seed)
    _run_epochs(model, inputs, targets, val_inputs, val_targets, cfg, rng, cfg.max_epochs)
    return model


def fine_tune_forecaster(model: Seq2SeqForecaster, fmap: FeatureMap, cfg,
                         max_epochs: int = 20) -> int:
    """Warm-start training on newly observed data only; returns epochs used.

    The existing standardization statistics are kept so old forecasts stay
    decodable; the feature map must already be built against the model's
    schema (vocabulary extension happens during featurization).
    """
    if fmap.schema.width != model.schema.width:
        raise ModelError("schema width changed; full retrain required")
    rows = standardize(model.schema, fmap.rows)
    inputs, targets = sliding_windows(rows, model.k)
    rng = np.random.RandomState(model.seed + 1)
    epochs = _run_epochs(model, inputs, targets, None, None, cfg, rng,
                         min(max_epochs, cfg.max_epochs))
    model.stats.fine_tune_epochs.append(epochs)
    return epochs


def grow_forecaster(model: Seq2SeqForecaster, new_schema: FeatureSchema) -> Seq2SeqForecaster:
    """Extend a trained model for slots appended to its schema.

    Existing slots must keep their order; new input rows and output columns
    start near zero so prior behavior is preserved.
    """
    old_names = [s.name for s in model.schema.slots]
    new_names = [s.name for s in new_schema.slots]
    if new_names[:len(old_names) - 12] != old_names[:-12]:
        # the trailing 12 arrival slots stay last; member slots must be appended
        raise ModelError("schema change is not an append; full retrain required")
    appended = len(new_names) - len(old_names)
    if appended < 0:
        raise ModelError("schema shrank; full retrain required")
    rng = np.random.RandomState(model.seed + 7)
    old_mean, old_std = model.schema.norm_mean, model.schema.norm_std
    arrival_block = 12
    if new_schema.norm_mean is None and old_mean is not None:
        # keep old stats; new slots start unscaled until the next fit
        mean = np.concatenate([old_mean[:-arrival_block], np.zeros(appended),
                               old_mean[-arrival_block:]])
        std = np.concatenate([old_std[:-arrival_block], np.ones(appended),
                              old_std[-arrival_block:]])
        new_schema.norm_mean, new_schema.norm_std = mean, std

    grown = Seq2SeqForecaster(new_schema, model.k, model.hidden, model.seed)
    insert = len(old_names) - arrival_block

    def widen_rows(old: np.ndarray) -> np.ndarray:
        extra = rng.uniform(-0.01, 0.01, (appended, old.shape[1]))
        return np.vstack([old[:insert], extra, old[insert:]])

    grown.enc1.wx = widen_rows(model.enc1.wx)
    grown.enc1.wh = model.enc1.wh.copy()
    grown.enc1.b = model.enc1.b.copy()
    for name in ("enc2", "dec1", "dec2"):
        src, dst = getattr(model, name), getattr(grown, name)
        dst.wx = src.wx.copy()
        dst.wh = src.wh.copy()
        dst.b = src.b.copy()
    extra_cols = rng.uniform(-0.01, 0.01, (model.hidden, appended))
    grown.wd = np.hstack([model.wd[:, :insert], extra_cols, model.wd[:, insert:]])
    grown.bd = np.concatenate([model.bd[:insert], np.zeros(appended), model.bd[insert:]])
    grown.stats = model.stats
    return grown


# ---------------------------------------------------------------------------
# History baseline
# ---------------------------------------------------------------------------

def history_forecast_k(workload: TimedWorkload, k: int) -> list[TimedQuery]:
    """Replay the last k queries with arrivals shifted by the window span."""
    if len(workload) < k:
        raise ModelError(f"history baseline needs {k} queries, got {len(workload)}")
    tail = workload.queries[-k:]
    span = tail[-1].arrival - tail[0].arrival
    return [TimedQuery(q.text, q.arrival + span) for q in tail]


def history_forecast_dt(workload: TimedWorkload, delta_t: int) -> list[TimedQuery]:
    """Replay the last delta_t window shifted forward by delta_t."""
    if not len(workload):
        raise ModelError("history baseline needs a non-empty workload")
    anchor = workload.anchor
    start = anchor - dt.timedelta(seconds=delta_t)
    shift = dt.timedelta(seconds=delta_t)
    window = [q for q in workload if start < q.arrival <= anchor]
    return [TimedQuery(q.text, q.arrival + shift) for q in window]


# ---------------------------------------------------------------------------
# Template-size rate estimator
# ---------------------------------------------------------------------------

class RateForecaster:
    """One-layer LSTM over a count series, predicting the next horizon."""

    def __init__(self, horizon: int, hidden: int, seed: int):
        self.horizon = horizon
        self.hidden = hidden
        self.seed = seed
        rng = np.random.RandomState(seed)
        self.lstm = LstmLayer(1, hidden, rng)
        scale = 1.0 / np.sqrt(hidden)
        self.wd = rng.uniform(-scale, scale, (hidden, horizon))
        self.bd = np.zeros(horizon)
        self.mean = 0.0
        self.std = 1.0

    def params(self) -> list:
        return self.lstm.params("lstm") + [("dense.w", self.wd), ("dense.b", self.bd)]

    def forward(self, windows: np.ndarray) -> np.ndarray:
        """windows: (B, horizon) standardized counts -> (B, horizon)."""
        _, h, _ = self.lstm.forward(windows[:, :, None])
        return h @ self.wd + self.bd

    def loss_and_grads(self, windows: np.ndarray, targets: np.ndarray):
        pred = self.forward(windows)
        loss, d_out = huber_loss(pred, targets)
        h_final = self.lstm._cache["o"][-1] * self.lstm._cache["tanh_c"][-1]
        grads = {"dense.w": h_final.T @ d_out, "dense.b": d_out.sum(axis=0)}
        dh = d_out @ self.wd.T
        _, lstm_grads, _, _ = self.lstm.backward(None, dh_final=dh)
        for key, val in lstm_grads.items():
            grads[f"lstm.{key}"] = val
        return loss, grads

    def predict_raw(self, recent: np.ndarray) -> np.ndarray:
        """Real-valued non-negative rate forecast over the horizon."""
        window = (np.asarray(recent[-self.horizon:], dtype=np.float64) - self.mean) / self.std
        out = self.forward(window[None, :])[0]
        return np.maximum(out * self.std + self.mean, 0.0)

    def predict(self, recent: np.ndarray) -> np.ndarray:
        """Integer count forecast (rounded up) over the horizon."""
        return np.ceil(self.predict_raw(recent)).astype(int)

    def to_bytes(self, extra: Optional[dict] = None) -> bytes:
        header = {"kind": "rate", "horizon": self.horizon, "hidden": self.hidden,
                  "seed": self.seed, "mean": self.mean, "std": self.std,
                  "names": [n for n, _ in self.params()], "extra": extra or {}}
        return pack_arrays(header, [p for _, p in self.params()])

    @classmethod
    def from_bytes(cls, blob: bytes) -> tuple["RateForecaster", dict]:
        header, arrays = unpack_arrays(blob)
        if header["kind"] != "rate":
            raise ModelError(f"not a rate blob: {header['kind']}")
        model = cls(header["horizon"], header["hidden"], header["seed"])
        for (name, param), stored in zip(model.params(), arrays):
            param[...] = stored
        model.mean = header["mean"]
        model.std = header["std"]
        return model, header.get("extra", {})


def train_rate_forecaster(series, cfg, horizon: int,
                          seed: Optional[int] = None) -> RateForecaster:
    """Fit the size estimator on a per-fine-slot count series."""
    series = np.asarray(series, dtype=np.float64)
    if series.size < 4 * horizon:
        raise ModelError(
            f"rate series too short: {series.size} < {4 * horizon}")
    seed = cfg.seed if seed is None else seed
    mean = float(series.mean())
    std = float(series.std()) or 1.0
    normed = (series - mean) / std
    n = series.size - 2 * horizon + 1
    inputs = np.stack([normed[i:i + horizon] for i in range(n)])
    targets = np.stack([normed[i + horizon:i + 2 * horizon] for i in range(n)])
    model = RateForecaster(horizon, min(horizon, 32), seed)
    model.mean, model.std = mean, std
    params = model.params()
    optimizer = AdamOptimizer(params, cfg.lr)
    rng = np.random.RandomState(seed)
    batch_size = max(1, min(cfg.batch_size, n))
    best = np.inf
    stale = 0
    for epoch in range(cfg.max_epochs):
        optimizer.lr = cfg.lr * (cfg.lr_decay ** epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            loss, grads = model.loss_and_grads(inputs[batch], targets[batch])
            optimizer.step(grads)
            total += loss * len(batch)
        total /= n
        if total < best - 1e-4:
            best = total
            stale = 0
        else:
            stale += 1
            if stale >= 3:
                break
    return model
