"""Neural network model: loading, evaluation, and activation tracing.

The network under verification is either a layered feed-forward model or a
simple recurrent model (Elman-style cell plus a readout layer). Networks are
immutable after loading; all evaluation functions are pure, so they are safe
to call concurrently.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationError, ModelFormatError

ACTIVATIONS = ("relu", "sigmoid", "tanh", "identity")


def _apply_activation(name: str, x: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-x))
    if name == "tanh":
        return np.tanh(x)
    return x  # identity


@dataclass(frozen=True)
class FeatureSpec:
    """One input feature: categorical with a cardinality, or a bounded real."""

    name: str
    index: int
    kind: str  # "categorical" | "continuous"
    cardinality: int = 0
    lo: float = 0.0
    hi: float = 0.0
    protected: bool = False

    def __post_init__(self):
        if self.kind == "categorical":
            if self.cardinality < 2:
                raise ModelFormatError(
                    f"feature {self.name!r}: categorical cardinality must be >= 2"
                )
        elif self.kind == "continuous":
            if not self.lo < self.hi:
                raise ModelFormatError(
                    f"feature {self.name!r}: continuous range needs lo < hi"
                )
        else:
            raise ModelFormatError(f"feature {self.name!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class Layer:
    """Affine transform followed by an element-wise activation."""

    weights: np.ndarray  # (d_out, d_in)
    bias: np.ndarray  # (d_out,)
    activation: str

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ModelFormatError(
                f"layer shapes inconsistent: weights {w.shape}, bias {b.shape}"
            )
        if self.activation not in ACTIVATIONS:
            raise ModelFormatError(f"unknown activation {self.activation!r}")

    @property
    def in_width(self) -> int:
        return self.weights.shape[1]

    @property
    def out_width(self) -> int:
        return self.weights.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return _apply_activation(self.activation, x @ self.weights.T + self.bias)


@dataclass(frozen=True)
class RecurrentCell:
    """Elman-style recurrence h' = act(W_in x + W_h h + b) with a readout layer."""

    input_weights: np.ndarray  # (h, d_in)
    hidden_weights: np.ndarray  # (h, h)
    bias: np.ndarray  # (h,)
    activation: str
    readout: Layer

    def __post_init__(self):
        wi = np.asarray(self.input_weights, dtype=np.float64)
        wh = np.asarray(self.hidden_weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        object.__setattr__(self, "input_weights", wi)
        object.__setattr__(self, "hidden_weights", wh)
        object.__setattr__(self, "bias", b)
        if wh.ndim != 2 or wh.shape[0] != wh.shape[1]:
            raise ModelFormatError("recurrent hidden weights must be square")
        h = wh.shape[0]
        if wi.shape[0] != h or b.shape != (h,):
            raise ModelFormatError("recurrent cell shapes inconsistent")
        if self.activation not in ("tanh", "sigmoid"):
            raise ModelFormatError(
                f"recurrent activation must be tanh or sigmoid, got {self.activation!r}"
            )
        if self.readout.in_width != h:
            raise ModelFormatError("readout input width must equal hidden width")

    @property
    def hidden_width(self) -> int:
        return self.hidden_weights.shape[0]

    def step(self, x: np.ndarray, h: np.ndarray) -> np.ndarray:
        pre = x @ self.input_weights.T + h @ self.hidden_weights.T + self.bias
        return _apply_activation(self.activation, pre)


@dataclass(frozen=True)
class Network:
    """A loaded model: layers, feature specs, and output label names.

    For ``kind == "recurrent"`` the cell drives the recurrence and
    ``layers`` holds just the readout layer.
    """

    layers: tuple[Layer, ...]
    input_spec: tuple[FeatureSpec, ...]
    output_labels: tuple[str, ...]
    kind: str = "feedforward"
    cell: RecurrentCell | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_spec", tuple(self.input_spec))
        object.__setattr__(self, "output_labels", tuple(str(l) for l in self.output_labels))
        if not self.layers:
            raise ModelFormatError("network needs at least one layer")
        if self.kind not in ("feedforward", "recurrent"):
            raise ModelFormatError(f"unknown network kind {self.kind!r}")
        if self.kind == "recurrent" and self.cell is None:
            raise ModelFormatError("recurrent network needs a cell")
        if self.kind == "feedforward":
            for i in range(len(self.layers) - 1):
                if self.layers[i].out_width != self.layers[i + 1].in_width:
                    raise ModelFormatError(
                        f"layer {i} output width {self.layers[i].out_width} does not "
                        f"match layer {i + 1} input width {self.layers[i + 1].in_width}"
                    )
        out = self.layers[-1].out_width
        if out != len(self.output_labels) and out != 1:
            raise ModelFormatError(
                f"output width {out} matches neither the {len(self.output_labels)} "
                "labels nor a single thresholded output"
            )

    @property
    def input_width(self) -> int:
        if self.kind == "recurrent":
            return self.cell.input_weights.shape[1]
        return self.layers[0].in_width

    @property
    def single_output(self) -> bool:
        return self.layers[-1].out_width == 1

    def hidden_widths(self) -> list[int]:
        """Widths of the observable hidden activations, in trace order."""
        if self.kind == "recurrent":
            return [self.cell.hidden_width]
        return [layer.out_width for layer in self.layers[:-1]]


@dataclass
class ActivationTrace:
    """A single evaluation with every intermediate activation recorded."""

    input: np.ndarray
    per_step_activations: list[tuple[int, np.ndarray]] = field(default_factory=list)
    output: np.ndarray = field(default_factory=lambda: np.zeros(0))
    label: int = -1


def _check_input(net: Network, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if net.kind == "recurrent":
        if x.ndim != 2 or x.shape[1] != net.input_width:
            raise ValueError(
                f"recurrent input must be a (steps, {net.input_width}) sequence, "
                f"got shape {x.shape}"
            )
    elif x.shape != (net.input_width,):
        raise ValueError(f"input length {x.shape} does not match width {net.input_width}")
    return x


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on one input (a step sequence for recurrent nets)."""
    return forward_trace(net, x).output


def forward_trace(net: Network, x: np.ndarray) -> ActivationTrace:
    """Evaluate the network, recording one activation entry per hidden layer
    (feed-forward) or per timestep (recurrent)."""
    x = _check_input(net, x)
    trace = ActivationTrace(input=x)
    if net.kind == "recurrent":
        h = np.zeros(net.cell.hidden_width)
        for t in range(x.shape[0]):
            h = net.cell.step(x[t], h)
            trace.per_step_activations.append((t, h))
        out = net.layers[-1](h)
    else:
        h = x
        for i, layer in enumerate(net.layers):
            h = layer(h)
            if i < len(net.layers) - 1:
                trace.per_step_activations.append((i, h))
        out = h
    trace.output = out
    trace.label = predict_label(net, out)
    return trace


def forward_batch(net: Network, X: np.ndarray) -> np.ndarray:
    """Evaluate a batch of inputs: (n, p) feed-forward or (n, T, p) recurrent."""
    X = np.asarray(X, dtype=np.float64)
    if net.kind == "recurrent":
        n, T, _ = X.shape
        h = np.zeros((n, net.cell.hidden_width))
        for t in range(T):
            h = net.cell.step(X[:, t, :], h)
        return net.layers[-1](h)
    h = X
    for layer in net.layers:
        h = layer(h)
    return h


def hidden_activations_batch(net: Network, X: np.ndarray):
    """Hidden activations for a batch: a list of (n, d_l) arrays per hidden
    layer, or one (n, T, h) array of per-timestep states for recurrent nets."""
    X = np.asarray(X, dtype=np.float64)
    if net.kind == "recurrent":
        n, T, _ = X.shape
        h = np.zeros((n, net.cell.hidden_width))
        out = np.empty((n, T, net.cell.hidden_width))
        for t in range(T):
            h = net.cell.step(X[:, t, :], h)
            out[:, t, :] = h
        return out
    hs = []
    h = X
    for layer in net.layers[:-1]:
        h = layer(h)
        hs.append(h)
    return hs


def predict_label(net: Network, output: np.ndarray) -> int:
    """Map an output vector to a label index.

    Multi-output: argmax, ties broken toward the lowest index. Single
    output: label 1 iff the value is >= 0.5.
    """
    output = np.asarray(output, dtype=np.float64)
    if net.single_output:
        return int(output.reshape(-1)[0] >= 0.5)
    if output.shape[-1] != len(net.output_labels):
        raise ValueError(
            f"output width {output.shape[-1]} does not match "
            f"{len(net.output_labels)} labels"
        )
    return int(np.argmax(output))


def predict_labels(net: Network, outputs: np.ndarray) -> np.ndarray:
    """Vectorized predict_label over a batch of output rows."""
    outputs = np.asarray(outputs, dtype=np.float64)
    if net.single_output:
        return (outputs[:, 0] >= 0.5).astype(np.int64)
    return np.argmax(outputs, axis=1)


def eval_accuracy(net: Network, dataset) -> float:
    """Fraction of (input, label) rows the network predicts correctly."""
    inputs, labels = _dataset_arrays(dataset)
    if len(labels) == 0:
        raise EvaluationError("cannot evaluate accuracy on an empty dataset")
    predicted = predict_labels(net, forward_batch(net, inputs))
    return float(np.mean(predicted == labels))


def _dataset_arrays(dataset) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(dataset, tuple) and len(dataset) == 2:
        return np.asarray(dataset[0], dtype=np.float64), np.asarray(dataset[1])
    rows = list(dataset)
    if not rows:
        return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
    inputs = np.asarray([r[0] for r in rows], dtype=np.float64)
    labels = np.asarray([r[1] for r in rows], dtype=np.int64)
    return inputs, labels


# ---------------------------------------------------------------------------
# model file format (JSON):
#   kind, layers [{weights, bias, activation}], features [{name, index, kind,
#   cardinality | lo/hi, protected}], labels; recurrent models replace layers
#   with cell {input_weights, hidden_weights, bias, activation} + readout.
# ---------------------------------------------------------------------------


def _parse_feature(entry: dict, pos: int) -> FeatureSpec:
    try:
        kind = entry["kind"]
        return FeatureSpec(
            name=entry["name"],
            index=int(entry.get("index", pos)),
            kind=kind,
            cardinality=int(entry.get("cardinality", 0)),
            lo=float(entry.get("lo", 0.0)),
            hi=float(entry.get("hi", 0.0)),
            protected=bool(entry.get("protected", False)),
        )
    except KeyError as exc:
        raise ModelFormatError(f"feature #{pos}: missing key {exc}") from None


def _parse_layer(entry: dict, idx: int) -> Layer:
    for key in ("weights", "bias"):
        if key not in entry:
            raise ModelFormatError(f"layer {idx}: missing key {key!r}")
    activation = entry.get("activation", "identity")
    if activation not in ACTIVATIONS:
        raise ModelFormatError(f"layer {idx}: unknown activation {activation!r}")
    try:
        return Layer(
            weights=np.asarray(entry["weights"], dtype=np.float64),
            bias=np.asarray(entry["bias"], dtype=np.float64),
            activation=activation,
        )
    except ModelFormatError as exc:
        raise ModelFormatError(f"layer {idx}: {exc}") from None


def load_network(path: str) -> Network:
    """Load a network from a JSON model file, validating all invariants."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ModelFormatError(f"cannot read model file {path!r}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file {path!r} is not valid JSON: {exc}") from None
    return network_from_dict(doc)


def network_from_dict(doc: dict) -> Network:
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    kind = doc.get("kind", "feedforward")
    features = tuple(_parse_feature(f, i) for i, f in enumerate(doc.get("features", [])))
    labels = tuple(str(l) for l in doc.get("labels", []))
    if kind == "recurrent":
        cell_doc = doc.get("cell")
        readout_doc = doc.get("readout")
        if cell_doc is None or readout_doc is None:
            raise ModelFormatError("recurrent model needs 'cell' and 'readout' keys")
        readout = _parse_layer(readout_doc, 0)
        cell = RecurrentCell(
            input_weights=np.asarray(cell_doc["input_weights"], dtype=np.float64),
            hidden_weights=np.asarray(cell_doc["hidden_weights"], dtype=np.float64),
            bias=np.asarray(cell_doc["bias"], dtype=np.float64),
            activation=cell_doc.get("activation", "tanh"),
            readout=readout,
        )
        return Network(layers=(readout,), input_spec=features, output_labels=labels,
                       kind="recurrent", cell=cell)
    layers = tuple(_parse_layer(l, i) for i, l in enumerate(doc.get("layers", [])))
    try:
        return Network(layers=layers, input_spec=features, output_labels=labels, kind=kind)
    except ModelFormatError:
        # re-raise dimension mismatches with the offending layer index
        for i in range(len(layers) - 1):
            if layers[i].out_width != layers[i + 1].in_width:
                raise ModelFormatError(
                    f"layer {i} output width {layers[i].out_width} does not match "
                    f"layer {i + 1} input width {layers[i + 1].in_width}"
                ) from None
        raise


def network_to_dict(net: Network) -> dict:
    doc = {
        "kind": net.kind,
        "features": [
            {
                "name": f.name,
                "index": f.index,
                "kind": f.kind,
                **({"cardinality": f.cardinality} if f.kind == "categorical"
                   else {"lo": f.lo, "hi": f.hi}),
                "protected": f.protected,
            }
            for f in net.input_spec
        ],
        "labels": list(net.output_labels),
    }
    if net.kind == "recurrent":
        doc["cell"] = {
            "input_weights": net.cell.input_weights.tolist(),
            "hidden_weights": net.cell.hidden_weights.tolist(),
            "bias": net.cell.bias.tolist(),
            "activation": net.cell.activation,
        }
        doc["readout"] = {
            "weights": net.cell.readout.weights.tolist(),
            "bias": net.cell.readout.bias.tolist(),
            "activation": net.cell.readout.activation,
        }
    else:
        doc["layers"] = [
            {"weights": l.weights.tolist(), "bias": l.bias.tolist(),
             "activation": l.activation}
            for l in net.layers
        ]
    return doc


def save_network(net: Network, path: str) -> None:
    """Write a network back out in the model file format."""
    with open(path, "w") as fh:
        json.dump(network_to_dict(net), fh, indent=2)
        fh.write("\n")


def clone_network(net: Network) -> Network:
    """Deep copy with writable weight arrays (used by repair candidates)."""
    return copy.deepcopy(net)
