"""Branch architectures and their assembly into triplet networks.

A branch is a stack of layers read from a declarative preset file, ending
in an embedding head (a linear layer with no activation after it). Three
branches make a triplet net: the anchor processes sketches, the positive
and negative branches process the photo-domain inputs and are one and the
same object, so they share every parameter by construction. Cross-branch
sharing between the anchor and the photo side is configured per layer by
rebinding parameter tensors, which makes "shared" mean literal object
identity rather than value copying.
"""

from __future__ import annotations

import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np
import yaml

from .autograd import Tensor, conv2d, dropout, linear, maxpool2d, relu

PAIRINGS = ("sketch_edgemap", "sketch_photo")
SHARING_MODES = ("full_share", "half_share", "no_share")
EMBED_DIM = 128
HEAD_NAME = "fc_r"


@dataclass
class LayerSpec:
    """Declarative description of one layer, as read from a preset file."""

    kind: str
    name: str
    hyper: dict = field(default_factory=dict)
    shareable: bool = False


def _he_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(np.float32)


class ConvLayer:
    parameterized = True

    def __init__(self, spec: LayerSpec, in_channels: int,
                 rng: np.random.Generator):
        h = spec.hyper
        self.spec = spec
        self.stride = int(h.get("stride", 1))
        self.pad = int(h.get("pad", 0))
        k = int(h["kernel"])
        out = int(h["out_channels"])
        self.weight = Tensor(
            _he_init(rng, (out, in_channels, k, k), in_channels * k * k),
            requires_grad=True, name=f"{spec.name}.weight")
        self.bias = Tensor(np.zeros(out, dtype=np.float32),
                           requires_grad=True, name=f"{spec.name}.bias")

    def forward(self, x, training, rng):
        return conv2d(x, self.weight, self.bias, stride=self.stride,
                      pad=self.pad)

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def out_shape(self, c, s):
        h = self.spec.hyper
        k = int(h["kernel"])
        return int(h["out_channels"]), (s + 2 * self.pad - k) // self.stride + 1


class PoolLayer:
    parameterized = False

    def __init__(self, spec: LayerSpec):
        self.spec = spec
        self.k = int(spec.hyper["k"])
        self.stride = int(spec.hyper.get("stride", self.k))

    def forward(self, x, training, rng):
        return maxpool2d(x, self.k, self.stride)

    def out_shape(self, c, s):
        return c, (s - self.k) // self.stride + 1


class ReluLayer:
    parameterized = False

    def __init__(self, spec: LayerSpec):
        self.spec = spec

    def forward(self, x, training, rng):
        return relu(x)

    def out_shape(self, c, s):
        return c, s


class DropoutLayer:
    parameterized = False

    def __init__(self, spec: LayerSpec):
        self.spec = spec
        self.p = float(spec.hyper["p"])

    def forward(self, x, training, rng):
        if not training:
            return x
        if rng is None:
            raise ValueError(
                f"layer {self.spec.name!r} needs an rng when training")
        return dropout(x, self.p, rng, training=True)

    def out_shape(self, c, s):
        return c, s


class LinearLayer:
    """Fully-connected layer; flattens 4-D activations on the way in."""

    parameterized = True

    def __init__(self, spec: LayerSpec, in_features: int,
                 rng: np.random.Generator):
        self.spec = spec
        out = int(spec.hyper["out_features"])
        self.in_features = in_features
        self.weight = Tensor(_he_init(rng, (out, in_features), in_features),
                             requires_grad=True, name=f"{spec.name}.weight")
        self.bias = Tensor(np.zeros(out, dtype=np.float32),
                           requires_grad=True, name=f"{spec.name}.bias")

    def forward(self, x, training, rng):
        if x.data.ndim > 2:
            x = x.reshape((x.shape[0], -1))
        return linear(x, self.weight, self.bias)

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]


_LAYER_KINDS = {"conv", "pool", "relu", "linear", "dropout"}


class Branch:
    """One tower of the triplet net, from input image to embedding.

    ``layers`` covers the preset's stack; the embedding head and the
    optional classifier head live in separate slots because the curriculum
    attaches, detaches, and shares them independently of the stack.
    """

    def __init__(self, preset: dict, seed: int = 0, name: str = ""):
        self.preset_name = preset["name"]
        self.name = name or preset["name"]
        self.domain = preset["domain"]
        self.input_channels = int(preset["input_channels"])
        self.input_size = int(preset["input_size"])
        self.embed_dim = int(preset.get("embed_dim", EMBED_DIM))
        rng = np.random.default_rng(seed)

        self.layers = []
        self.specs: list[LayerSpec] = []
        names_seen = set()
        c, s = self.input_channels, self.input_size
        flat: Optional[int] = None
        for raw in preset["layers"]:
            raw = dict(raw)
            kind = raw.pop("kind")
            lname = raw.pop("name")
            shareable = bool(raw.pop("shareable", False))
            if kind not in _LAYER_KINDS:
                raise ValueError(f"unknown layer kind {kind!r} in preset "
                                 f"{self.preset_name!r}")
            if lname in names_seen:
                raise ValueError(f"duplicate layer name {lname!r} in preset "
                                 f"{self.preset_name!r}")
            names_seen.add(lname)
            spec = LayerSpec(kind=kind, name=lname, hyper=raw,
                             shareable=shareable)
            if kind == "conv":
                if flat is not None:
                    raise ValueError(
                        f"conv layer {lname!r} after a linear layer")
                layer = ConvLayer(spec, c, rng)
                c, s = layer.out_shape(c, s)
                if s < 1:
                    raise ValueError(
                        f"layer {lname!r} shrinks the map to {s}, check the "
                        f"preset geometry")
            elif kind == "pool":
                layer = PoolLayer(spec)
                c, s = layer.out_shape(c, s)
            elif kind == "relu":
                layer = ReluLayer(spec)
            elif kind == "dropout":
                layer = DropoutLayer(spec)
            else:
                if flat is None:
                    flat = c * s * s
                layer = LinearLayer(spec, flat, rng)
                flat = int(spec.hyper["out_features"])
            self.layers.append(layer)
            self.specs.append(spec)
        if flat is None:
            flat = c * s * s
        head_spec = LayerSpec(kind="linear", name=HEAD_NAME,
                              hyper={"out_features": self.embed_dim},
                              shareable=True)
        self.head = LinearLayer(head_spec, flat, rng)
        self.classifier: Optional[LinearLayer] = None
        self._train_rng = np.random.default_rng(seed + 0x5EED)

    # -- introspection -----------------------------------------------------------

    def parameterized_layers(self) -> "OrderedDict[str, object]":
        """Stack order, embedding head last, classifier excluded."""
        out = OrderedDict()
        for layer in self.layers:
            if layer.parameterized:
                out[layer.spec.name] = layer
        out[HEAD_NAME] = self.head
        return out

    def layer_by_name(self, name: str):
        table = self.parameterized_layers()
        if self.classifier is not None:
            table["fc8"] = self.classifier
        if name not in table:
            raise KeyError(f"branch {self.name!r} has no parameterized layer "
                           f"{name!r} (has {list(table)})")
        return table[name]

    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        out = OrderedDict()
        for lname, layer in self.parameterized_layers().items():
            for suffix, p in layer.params():
                out[f"{lname}.{suffix}"] = p
        if self.classifier is not None:
            for suffix, p in self.classifier.params():
                out[f"fc8.{suffix}"] = p
        return out

    def parameters(self) -> list:
        return list(self.named_parameters().values())

    def shareable_layer_names(self) -> tuple:
        names = [s.name for s in self.specs
                 if s.shareable and s.kind in ("conv", "linear")]
        names.append(HEAD_NAME)
        return tuple(names)

    # -- running the tower ---------------------------------------------------------

    def _check_input(self, image: Tensor) -> Tensor:
        data = image.data if isinstance(image, Tensor) else np.asarray(image)
        want = (self.input_channels, self.input_size, self.input_size)
        if data.ndim == 3:
            if data.shape != want:
                raise ValueError(
                    f"branch {self.name!r} expects input {want}, got "
                    f"{data.shape}")
            data = data[None]
        elif data.ndim == 4:
            if data.shape[1:] != want:
                raise ValueError(
                    f"branch {self.name!r} expects batches of {want}, got "
                    f"{data.shape}")
        else:
            raise ValueError(
                f"branch {self.name!r} expects a 3-D image or 4-D batch, "
                f"got shape {data.shape}")
        if isinstance(image, Tensor) and data is image.data:
            return image
        return Tensor(data.astype(np.float32, copy=False))

    def features(self, image, training: bool = False, rng=None) -> Tensor:
        """Pre-head activations, shape [N, F]."""
        x = self._check_input(image)
        if training and rng is None:
            rng = self._train_rng
        for layer in self.layers:
            x = layer.forward(x, training, rng)
        if x.data.ndim > 2:
            x = x.reshape((x.shape[0], -1))
        return x

    def embed(self, image, training: bool = False, rng=None) -> Tensor:
        """D-dimensional embedding; [D] for one image, [N, D] for a batch."""
        single = not isinstance(image, Tensor) and np.asarray(image).ndim == 3 \
            or isinstance(image, Tensor) and image.data.ndim == 3
        out = self.head.forward(self.features(image, training, rng),
                                training, rng)
        if single:
            out = out.reshape((self.embed_dim,))
        return out

    def classify(self, image, training: bool = False, rng=None) -> Tensor:
        """Logits through the classifier head; requires one attached."""
        if self.classifier is None:
            raise ValueError(f"branch {self.name!r} has no classifier head")
        emb = self.head.forward(self.features(image, training, rng),
                                training, rng)
        return self.classifier.forward(emb, training, rng)

    # -- training plumbing ---------------------------------------------------------

    def set_layer_trainable(self, names, trainable: bool) -> None:
        for name in names:
            for _, p in self.layer_by_name(name).params():
                p.requires_grad = bool(trainable)

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = True


def load_preset(name: str) -> dict:
    """Read a preset description shipped with the package."""
    pkg_files = resources.files("sketchembed") / "presets" / f"{name}.yaml"
    try:
        text = pkg_files.read_text()
    except FileNotFoundError:
        raise ValueError(f"unknown preset {name!r}") from None
    preset = yaml.safe_load(text)
    for key in ("name", "domain", "input_channels", "input_size", "layers"):
        if key not in preset:
            raise ValueError(f"preset {name!r} is missing {key!r}")
    return preset


_PRESET_FILES = {
    ("sketch", "mini"): "mini_sketch",
    ("sketch", "paper"): "paper_sketch",
    ("photo", "mini"): "mini_photo",
    ("photo", "paper"): "paper_photo",
    ("hybrid", "paper"): "paper_sketch_hybrid",
    ("hybrid", "mini"): "mini_sketch",  # the mini scale sidesteps hybridisation
}


def _resolve(role: str, preset: str) -> dict:
    if preset not in ("mini", "paper"):
        raise ValueError(f"unknown preset {preset!r}, expected 'mini' or 'paper'")
    return load_preset(_PRESET_FILES[(role, preset)])


def build_sketch_branch(preset: str = "mini", seed: int = 0) -> Branch:
    return Branch(_resolve("sketch", preset), seed=seed, name="anchor")


def build_photo_branch(preset: str = "mini", seed: int = 0) -> Branch:
    return Branch(_resolve("photo", preset), seed=seed, name="photo")


@dataclass(frozen=True)
class SharingScheme:
    """Which layers the anchor shares with the photo-side branch."""

    mode: str
    shared_layer_names: tuple

    def __post_init__(self):
        if self.mode not in SHARING_MODES:
            raise ValueError(f"unknown sharing mode {self.mode!r}, expected "
                             f"one of {SHARING_MODES}")


def resolve_sharing(mode: str, pairing: str, anchor: Branch,
                    photo: Branch) -> SharingScheme:
    """Translate a sharing mode into concrete layer names for a pairing.

    half_share means the top 4 parameterized layers for sketch-edgemap and
    the fully-connected block (including the head) for sketch-photo, where
    the earlier layers' shapes diverge between the two towers.
    """
    if pairing not in PAIRINGS:
        raise ValueError(f"unknown pairing {pairing!r}, expected one of "
                         f"{PAIRINGS}")
    if mode not in SHARING_MODES:
        raise ValueError(f"unknown sharing mode {mode!r}, expected one of "
                         f"{SHARING_MODES}")
    stack = list(anchor.parameterized_layers())
    if mode == "no_share":
        return SharingScheme(mode, ())
    if mode == "full_share":
        if pairing == "sketch_photo":
            raise ValueError(
                "full_share is not valid for the sketch_photo pairing: the "
                "sketch and photo towers have different convolution shapes, "
                "only their FC block lines up (use half_share)")
        return SharingScheme(mode, tuple(stack))
    if pairing == "sketch_edgemap":
        return SharingScheme(mode, tuple(stack[-4:]))
    fc_names = [name for name, layer in anchor.parameterized_layers().items()
                if isinstance(layer, LinearLayer)]
    return SharingScheme(mode, tuple(fc_names))


class TripletNet:
    """Anchor plus a single photo-side branch standing in for both the
    positive and negative towers."""

    def __init__(self, anchor: Branch, photo: Branch, scheme: SharingScheme,
                 pairing: str):
        self.anchor = anchor
        self.photo = photo
        self.pairing = pairing
        self.scheme = scheme
        self._bind_shared()

    @property
    def positive(self) -> Branch:
        return self.photo

    @property
    def negative(self) -> Branch:
        return self.photo

    def _bind_shared(self) -> None:
        stack = list(self.anchor.parameterized_layers())
        shared = list(self.scheme.shared_layer_names)
        if shared and shared != stack[len(stack) - len(shared):]:
            raise ValueError(
                f"shared layers {shared} are not a contiguous suffix of the "
                f"stack {stack}")
        anchor_shareable = set(self.anchor.shareable_layer_names())
        photo_shareable = set(self.photo.shareable_layer_names())
        for name in shared:
            if name not in anchor_shareable or name not in photo_shareable:
                raise ValueError(
                    f"layer {name!r} is not shareable between "
                    f"{self.anchor.preset_name!r} and "
                    f"{self.photo.preset_name!r}")
            src = self.anchor.layer_by_name(name)
            dst = self.photo.layer_by_name(name)
            if src.weight.shape != dst.weight.shape:
                raise ValueError(
                    f"cannot share layer {name!r}: anchor shape "
                    f"{src.weight.shape} vs photo shape {dst.weight.shape}")
            dst.weight = src.weight
            dst.bias = src.bias

    # -- parameter bookkeeping ----------------------------------------------------

    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        """Unique parameters; shared ones appear once under ``anchor.``."""
        out = OrderedDict()
        seen = set()
        for prefix, branch in (("anchor", self.anchor), ("photo", self.photo)):
            for name, p in branch.named_parameters().items():
                if id(p) in seen:
                    continue
                seen.add(id(p))
                out[f"{prefix}.{name}"] = p
        return out

    def parameters(self) -> list:
        return list(self.named_parameters().values())

    def ownership(self) -> "OrderedDict[str, str]":
        """Layer name -> 'shared' or 'per_branch', in stack order.

        Decided by tensor identity rather than the scheme's name list:
        shared means the branches hold the same weight object.
        """
        out = OrderedDict()
        photo_layers = self.photo.parameterized_layers()
        for name, layer in self.anchor.parameterized_layers().items():
            shared = layer.weight is photo_layers[name].weight
            out[name] = "shared" if shared else "per_branch"
        return out

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, p.data) for k, p in
                           self.named_parameters().items())

    def load_state_dict(self, state: "dict[str, np.ndarray]") -> None:
        mine = self.named_parameters()
        missing = sorted(set(mine) - set(state))
        extra = sorted(set(state) - set(mine))
        if missing or extra:
            raise ValueError(
                f"checkpoint does not match this network: missing keys "
                f"{missing}, unexpected keys {extra}")
        for key, p in mine.items():
            arr = np.asarray(state[key], dtype=np.float32)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"checkpoint entry {key!r} has shape {arr.shape}, "
                    f"expected {p.data.shape}")
            p.data = arr.copy()

    def freeze(self) -> None:
        self.anchor.freeze()
        self.photo.freeze()

    def unfreeze(self) -> None:
        self.anchor.unfreeze()
        self.photo.unfreeze()

    def attach_classifiers(self, num_classes: int) -> None:
        """Give both towers a classification layer for the early phases.

        When the embedding head is shared the classifier is shared too, so
        the double-branch softmax phase trains one set of logits weights.
        """
        attach_classifier_head(self.anchor, num_classes)
        attach_classifier_head(self.photo, num_classes)
        if HEAD_NAME in self.scheme.shared_layer_names:
            self.photo.classifier.weight = self.anchor.classifier.weight
            self.photo.classifier.bias = self.anchor.classifier.bias

    def detach_classifiers(self) -> None:
        for branch in (self.anchor, self.photo):
            if branch.classifier is not None:
                detach_classifier_head(branch)


def build_triplet(scheme, pairing: str, preset: str = "mini",
                  seed: int = 0) -> TripletNet:
    """Assemble a triplet net for a pairing under a sharing mode.

    ``scheme`` is either a mode name or a pre-resolved SharingScheme. The
    photo-side branch gets an independent init stream (seed+1) so no_share
    towers start from genuinely different parameters.
    """
    if pairing not in PAIRINGS:
        raise ValueError(f"unknown pairing {pairing!r}, expected one of "
                         f"{PAIRINGS}")
    if pairing == "sketch_edgemap":
        anchor = Branch(_resolve("sketch", preset), seed=seed, name="anchor")
        photo = Branch(_resolve("sketch", preset), seed=seed + 1,
                       name="edgemap")
    else:
        anchor = Branch(_resolve("hybrid", preset), seed=seed, name="anchor")
        photo = Branch(_resolve("photo", preset), seed=seed + 1, name="photo")
    if isinstance(scheme, str):
        scheme = resolve_sharing(scheme, pairing, anchor, photo)
    return TripletNet(anchor, photo, scheme, pairing)


def load_triplet(path, scheme, pairing: str, preset: str = "mini",
                 seed: int = 0) -> TripletNet:
    """Build a net and restore it from a checkpoint file.

    Checkpoints written during the classification phases carry the fc8
    head, so it is re-attached before loading to make the keys match.
    """
    from .checkpoint import load_checkpoint

    state = load_checkpoint(path)
    net = build_triplet(scheme, pairing, preset=preset, seed=seed)
    head = state.get("anchor.fc8.weight")
    if head is not None:
        net.attach_classifiers(int(head.shape[0]))
    net.load_state_dict(state)
    return net


def attach_classifier_head(branch: Branch, num_classes: int) -> Branch:
    """Add the training-time classification layer after the embedding head.

    The composition stays linear from the pre-head features' point of view
    because no activation sits between the head and this layer.
    """
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    if branch.classifier is not None:
        raise ValueError(f"branch {branch.name!r} already has a classifier "
                         f"head")
    rng = np.random.default_rng(
        zlib.crc32(f"fc8:{branch.preset_name}:{branch.name}".encode()))
    spec = LayerSpec(kind="linear", name="fc8",
                     hyper={"out_features": num_classes}, shareable=True)
    branch.classifier = LinearLayer(spec, branch.embed_dim, rng)
    return branch


def detach_classifier_head(branch: Branch) -> Branch:
    if branch.classifier is None:
        raise ValueError(f"branch {branch.name!r} has no classifier head")
    branch.classifier = None
    return branch
