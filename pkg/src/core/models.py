"""
Classifier, decoder and the two explanation models built on the tensor core

The classifier (encoder) is a VGG-style stack of five 3×3 stride-2 conv
blocks followed by a dense head; every block output is a named tap. The
decoder mirrors the deepest stages with 5×5 stride-2 transposed convolutions
and keeps only as many stages as the tap needs to get back to 32×32.
"""

import hashlib
from collections import OrderedDict
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from ..utils.errors import ConfigError, ShapeError, UnknownTapError
from . import ops
from .tensor import Tensor, default_dtype, parameter

IMAGE_SHAPE = (1, 32, 32)
ENCODER_CHANNELS = (16, 32, 64, 128, 256)
DECODER_CHANNELS = (256, 128, 64, 32, 1)
ENCODER_KERNEL = 3
DECODER_KERNEL = 5
DEFAULT_LATENT_Z = 256

# Deepest first; the alias of a tap is -(position + 1)
TAP_NAMES = ("logits", "conv5", "conv4", "conv3", "conv2", "conv1")


@dataclass(frozen=True)
class LayerTap:
    """A classifier stage whose activations are decoded"""

    name: str

    @classmethod
    def parse(cls, value: Union[str, int, "LayerTap"]) -> "LayerTap":
        """Accept a stage name, a negative alias (-1 logits ... -6 conv1) or a LayerTap"""
        if isinstance(value, LayerTap):
            return value
        text = str(value).strip().lower()
        if text in TAP_NAMES:
            return cls(text)
        try:
            alias = int(text)
        except ValueError:
            raise UnknownTapError(f"Unknown layer tap {value!r}; expected one of {', '.join(TAP_NAMES)} or -1..-6")
        if -len(TAP_NAMES) <= alias <= -1:
            return cls(TAP_NAMES[-alias - 1])
        raise UnknownTapError(f"Tap alias {alias} out of range -1..-{len(TAP_NAMES)}")

    @property
    def alias(self) -> int:
        return -(TAP_NAMES.index(self.name) + 1)

    @property
    def conv_depth(self) -> int:
        """Number of conv blocks run before the tap (5 for logits)"""
        return 5 if self.name == "logits" else int(self.name[-1])

    @property
    def is_flat(self) -> bool:
        return self.name == "logits"

    def shape(self, n_classes: int, width_multiplier: Fraction = Fraction(1)) -> Tuple[int, ...]:
        """Per-sample activation shape at this tap"""
        if self.is_flat:
            return (n_classes,)
        channels = scaled_widths(ENCODER_CHANNELS, width_multiplier)[self.conv_depth - 1]
        side = IMAGE_SHAPE[1] // 2 ** self.conv_depth
        return (channels, side, side)

    def __str__(self) -> str:
        return self.name


def scaled_widths(widths: Tuple[int, ...], multiplier: Fraction) -> List[int]:
    """Scale channel counts; the result must be whole numbers ≥ 1"""
    scaled = []
    for width in widths:
        value = Fraction(width) * Fraction(multiplier)
        if value.denominator != 1 or value < 1:
            raise ConfigError(f"Width multiplier {multiplier} turns {width} channels into {value}")
        scaled.append(int(value))
    return scaled


def _he_normal(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Module:
    """Container of named parameters, buffers and child modules"""

    def __init__(self) -> None:
        self._parameters: "OrderedDict[str, Tensor]" = OrderedDict()
        self._buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self._modules: "OrderedDict[str, Module]" = OrderedDict()
        self.training = True

    def register_parameter(self, name: str, tensor: Tensor) -> Tensor:
        tensor.name = name
        self._parameters[name] = tensor
        return tensor

    def register_buffer(self, name: str, array: np.ndarray) -> np.ndarray:
        self._buffers[name] = array
        return array

    def register_module(self, name: str, module: "Module") -> "Module":
        self._modules[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        items = [(prefix + name, p) for name, p in self._parameters.items()]
        for name, child in self._modules.items():
            items.extend(child.named_parameters(f"{prefix}{name}."))
        return items

    def named_buffers(self, prefix: str = "") -> List[Tuple[str, np.ndarray]]:
        items = [(prefix + name, b) for name, b in self._buffers.items()]
        for name, child in self._modules.items():
            items.extend(child.named_buffers(f"{prefix}{name}."))
        return items

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self._modules.values():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = False
            p.zero_grad()
        return self

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters then buffers, in registration order"""
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, p in self.named_parameters():
            state[name] = p.data
        for name, b in self.named_buffers():
            state[name] = b
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = [name for name in own if name not in state]
        unexpected = [name for name in state if name not in own]
        if missing or unexpected:
            raise ShapeError(f"State mismatch: missing {missing}, unexpected {unexpected}")
        for name, target in own.items():
            value = np.asarray(state[name])
            if value.shape != target.shape:
                raise ShapeError(f"State entry {name} has shape {value.shape}, expected {target.shape}")
            target[...] = value


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 kernel: int = ENCODER_KERNEL, stride: int = 2, padding: int = 1):
        super().__init__()
        fan_in = in_channels * kernel * kernel
        self.weight = self.register_parameter(
            "weight", parameter(_he_normal(rng, (out_channels, in_channels, kernel, kernel), fan_in)))
        self.bias = self.register_parameter("bias", parameter(np.zeros(out_channels)))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Deconv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 kernel: int = DECODER_KERNEL, stride: int = 2):
        super().__init__()
        fan_in = in_channels * kernel * kernel // (stride * stride)
        self.weight = self.register_parameter(
            "weight", parameter(_he_normal(rng, (in_channels, out_channels, kernel, kernel), max(fan_in, 1))))
        self.bias = self.register_parameter("bias", parameter(np.zeros(out_channels)))
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return ops.deconv2d(x, self.weight, self.bias, self.stride)


class Dense(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.weight = self.register_parameter(
            "weight", parameter(_he_normal(rng, (in_features, out_features), in_features)))
        self.bias = self.register_parameter("bias", parameter(np.zeros(out_features)))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.dense(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels: int):
        super().__init__()
        self.gamma = self.register_parameter("gamma", parameter(np.ones(channels)))
        self.beta = self.register_parameter("beta", parameter(np.zeros(channels)))
        self.running_mean = self.register_buffer("running_mean", np.zeros(channels, dtype=default_dtype()))
        self.running_var = self.register_buffer("running_var", np.ones(channels, dtype=default_dtype()))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.batchnorm2d(
            x, self.gamma, self.beta, self.running_mean, self.running_var, training=self.training
        )


class ConvBlock(Module):
    """conv → batchnorm → relu"""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        super().__init__()
        self.conv = self.register_module("conv", Conv2d(in_channels, out_channels, rng))
        self.bn = self.register_module("bn", BatchNorm2d(out_channels))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.relu(self.bn(self.conv(x)))


class Encoder(Module):
    """
    VGG-style classifier exposing every conv block output as a tap

    When built with `tap`, only the stages up to that tap exist (the encoder
    half of a reference autoencoder).
    """

    def __init__(self, n_classes: int, width_multiplier: Fraction, rng: np.random.Generator,
                 tap: Optional[LayerTap] = None):
        super().__init__()
        if n_classes < 2:
            raise ConfigError(f"A classifier needs at least 2 classes, got {n_classes}")
        self.n_classes = n_classes
        self.width_multiplier = Fraction(width_multiplier)
        self.widths = scaled_widths(ENCODER_CHANNELS, self.width_multiplier)
        self.tap_limit = tap or LayerTap("logits")

        self.blocks: List[ConvBlock] = []
        in_channels = IMAGE_SHAPE[0]
        for depth, width in enumerate(self.widths[: self.tap_limit.conv_depth], 1):
            self.blocks.append(self.register_module(f"conv{depth}", ConvBlock(in_channels, width, rng)))
            in_channels = width
        self.fc: Optional[Dense] = None
        if self.tap_limit.is_flat:
            self.fc = self.register_module("fc", Dense(self.widths[-1], n_classes, rng))

    def forward_to(self, x: Tensor, tap: Union[str, int, LayerTap]) -> Tensor:
        """Activations at `tap` (post-ReLU for conv taps, pre-softmax for logits)"""
        tap = LayerTap.parse(tap)
        if x.data.ndim != 4 or x.shape[1:] != IMAGE_SHAPE:
            raise ShapeError(f"Encoder expects N×1×32×32 images, got {x.shape}")
        if tap.conv_depth > len(self.blocks) or (tap.is_flat and self.fc is None):
            raise UnknownTapError(f"Encoder built up to {self.tap_limit} cannot produce tap {tap}")
        h = x
        for block in self.blocks[: tap.conv_depth]:
            h = block(h)
        if tap.is_flat:
            h = self.fc(ops.flatten(h))
        return h

    def forward_full(self, x: Tensor) -> Tensor:
        return self.forward_to(x, "logits")

    def stage_names(self, tap: LayerTap) -> List[str]:
        names = [f"conv{d}" for d in range(1, tap.conv_depth + 1)]
        return names + (["fc"] if tap.is_flat else [])

    def spec(self) -> Dict[str, Union[int, str]]:
        return {"n_classes": self.n_classes, "width_multiplier": str(self.width_multiplier),
                "tap_limit": self.tap_limit.name}


class Decoder(Module):
    """
    Maps tap activations back to a 1×32×32 image

    Optional latent: flatten → dense(z) → relu → dense(tap) → relu. A flat tap
    (logits) enters through a dense stage reshaped to the conv5 shape.
    """

    def __init__(self, tap: LayerTap, n_classes: int, width_multiplier: Fraction,
                 rng: np.random.Generator, latent_z: Optional[int] = None):
        super().__init__()
        self.tap = tap
        self.n_classes = n_classes
        self.width_multiplier = Fraction(width_multiplier)
        self.latent_z = latent_z
        channels = scaled_widths(DECODER_CHANNELS[:-1], self.width_multiplier) + [DECODER_CHANNELS[-1]]
        encoder_widths = scaled_widths(ENCODER_CHANNELS, self.width_multiplier)

        n_stages = tap.conv_depth
        self.deconv_input_shape = (
            (encoder_widths[-1], 1, 1) if tap.is_flat else tap.shape(n_classes, self.width_multiplier)
        )
        tap_size = int(np.prod(tap.shape(n_classes, self.width_multiplier)))
        entry_size = int(np.prod(self.deconv_input_shape))

        self.latent: Optional[Dense] = None
        self.entry: Optional[Dense] = None
        if latent_z:
            self.latent = self.register_module("latent", Dense(tap_size, latent_z, rng))
            self.entry = self.register_module("fc", Dense(latent_z, entry_size, rng))
        elif tap.is_flat:
            self.entry = self.register_module("fc", Dense(tap_size, entry_size, rng))

        self.stages: List[Deconv2d] = []
        in_channels = self.deconv_input_shape[0]
        for i, out_channels in enumerate(channels[len(channels) - n_stages:]):
            self.stages.append(self.register_module(f"deconv{i + 1}", Deconv2d(in_channels, out_channels, rng)))
            in_channels = out_channels

    def __call__(self, h: Tensor) -> Tensor:
        expected = tuple(self.tap.shape(self.n_classes, self.width_multiplier))
        if h.shape[1:] != expected:
            raise ShapeError(f"Decoder for {self.tap} expects per-sample shape {expected}, got {h.shape[1:]}")
        n = h.shape[0]
        if self.latent is not None:
            h = ops.relu(self.latent(ops.flatten(h)))
        if self.entry is not None:
            h = ops.relu(self.entry(ops.flatten(h) if h.data.ndim > 2 else h))
            h = ops.reshape(h, (n,) + tuple(self.deconv_input_shape))
        for i, stage in enumerate(self.stages):
            h = stage(h)
            h = ops.sigmoid(h) if i == len(self.stages) - 1 else ops.relu(h)
        return h

    def spec(self) -> Dict[str, Union[int, str, None]]:
        return {"tap": self.tap.name, "n_classes": self.n_classes,
                "width_multiplier": str(self.width_multiplier), "latent_z": self.latent_z}


def build_encoder(n_classes: int, width_multiplier: Union[Fraction, str, float] = Fraction(1),
                  rng: Optional[np.random.Generator] = None, seed: int = 0,
                  tap: Optional[Union[str, int, LayerTap]] = None) -> Encoder:
    """Build a freshly initialized classifier (optionally truncated at `tap`)"""
    rng = rng if rng is not None else np.random.default_rng(seed)
    return Encoder(n_classes, Fraction(str(width_multiplier)), rng,
                   tap=LayerTap.parse(tap) if tap is not None else None)


def build_decoder(tap: Union[str, int, LayerTap], n_classes: int,
                  width_multiplier: Union[Fraction, str, float] = Fraction(1),
                  rng: Optional[np.random.Generator] = None, seed: int = 0,
                  latent_z: Optional[int] = None) -> Decoder:
    rng = rng if rng is not None else np.random.default_rng(seed)
    return Decoder(LayerTap.parse(tap), n_classes, Fraction(str(width_multiplier)), rng, latent_z)


class ExplanationModel:
    """Encoder-to-tap followed by a decoder; shared by ClaDec and the reference autoencoder"""

    kind = "model"

    def __init__(self, encoder: Encoder, decoder: Decoder):
        self.encoder = encoder
        self.decoder = decoder
        self.tap = decoder.tap

    def encode(self, x: Tensor) -> Tensor:
        return self.encoder.forward_to(x, self.tap)

    def forward(self, x: Tensor) -> Tensor:
        return self.decoder(self.encode(x))

    def trainable_parameters(self) -> List[Tensor]:
        return [p for p in self.encoder.parameters() + self.decoder.parameters() if p.requires_grad]

    def architecture_summary(self) -> List[Tuple[str, Tuple[int, ...]]]:
        """(name, shape) for every parameter on the input→tap→image path"""
        stages = tuple(f"{s}." for s in self.encoder.stage_names(self.tap))
        rows = [(f"encoder.{name}", p.shape) for name, p in self.encoder.named_parameters()
                if name.startswith(stages)]
        rows += [(f"decoder.{name}", p.shape) for name, p in self.decoder.named_parameters()]
        return rows

    def parameter_count(self) -> int:
        return int(sum(np.prod(shape) for _, shape in self.architecture_summary()))

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, value in self.encoder.state_dict().items():
            state[f"encoder.{name}"] = value
        for name, value in self.decoder.state_dict().items():
            state[f"decoder.{name}"] = value
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        self.encoder.load_state_dict({k[len("encoder."):]: v for k, v in state.items() if k.startswith("encoder.")})
        self.decoder.load_state_dict({k[len("decoder."):]: v for k, v in state.items() if k.startswith("decoder.")})


class ClaDecModel(ExplanationModel):
    """Decoder trained on the activations of a frozen classifier"""

    kind = "cladec"

    def __init__(self, classifier: Encoder, decoder: Decoder):
        super().__init__(classifier, decoder)
        classifier.freeze()
        classifier.eval()

    def trainable_parameters(self) -> List[Tensor]:
        return self.decoder.parameters()


class RefAEModel(ExplanationModel):
    """Encoder and decoder of identical architecture trained jointly for reconstruction"""

    kind = "refae"


def build_cladec(classifier: Encoder, tap: Union[str, int, LayerTap], rng: Optional[np.random.Generator] = None,
                 seed: int = 0, latent_z: Optional[int] = None) -> ClaDecModel:
    decoder = build_decoder(tap, classifier.n_classes, classifier.width_multiplier, rng=rng, seed=seed,
                            latent_z=latent_z)
    return ClaDecModel(classifier, decoder)


def build_refae(tap: Union[str, int, LayerTap], n_classes: int,
                width_multiplier: Union[Fraction, str, float] = Fraction(1),
                rng: Optional[np.random.Generator] = None, seed: int = 0,
                latent_z: Optional[int] = None) -> RefAEModel:
    rng = rng if rng is not None else np.random.default_rng(seed)
    tap = LayerTap.parse(tap)
    encoder = build_encoder(n_classes, width_multiplier, rng=rng, tap=tap)
    decoder = build_decoder(tap, n_classes, width_multiplier, rng=rng, latent_z=latent_z)
    return RefAEModel(encoder, decoder)


def forward_to_layer(classifier: Encoder, images: np.ndarray, tap: Union[str, int, LayerTap]) -> np.ndarray:
    """Activations of a batch at `tap`, without recording gradients"""
    return classifier.forward_to(Tensor(images), tap).data


def reconstruct(model: ExplanationModel, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Decode a batch of images in inference mode; pixels lie in [0, 1]"""
    was_training = (model.encoder.training, model.decoder.training)
    model.encoder.eval()
    model.decoder.eval()
    try:
        outputs = [model.forward(Tensor(images[i:i + batch_size])).data
                   for i in range(0, len(images), batch_size)]
    finally:
        model.encoder.train(was_training[0])
        model.decoder.train(was_training[1])
    return np.concatenate(outputs, axis=0)


def predict(classifier: Encoder, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Argmax class per image; ties go to the lowest class index"""
    was_training = classifier.training
    classifier.eval()
    try:
        logits = [classifier.forward_full(Tensor(images[i:i + batch_size])).data
                  for i in range(0, len(images), batch_size)]
    finally:
        classifier.train(was_training)
    return np.concatenate(logits, axis=0).argmax(axis=1)


def parameter_hash(module: Module) -> str:
    """sha256 over names, shapes and bytes of every parameter and buffer"""
    digest = hashlib.sha256()
    for name, array in module.state_dict().items():
        digest.update(name.encode("utf-8"))
        digest.update(str(array.shape).encode("utf-8"))
        digest.update(np.ascontiguousarray(array).tobytes())
    return digest.hexdigest()
