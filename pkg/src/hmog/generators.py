"""Generator architectures: soft binary tree (HMoG), flat softmax mixture
(MoG), a single fully connected generator, and the MADGAN, MGAN and MEGAN
multi-generator banks.

Every full generator maps a latent batch ``z`` of shape (n, latent_dim) to
samples of shape (n, data_dim) through an intermediate representation ``h``
and a shared block.  Generator indices ("labels") are 1-based so that they
line up with the MADGAN discriminator classes, where class 0 means real.
"""

from __future__ import annotations

from collections.abc import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .layers import DenseNet, Module, glorot

ARCHITECTURES = ("hmog", "mog", "fc", "madgan", "mgan", "megan")


def _check_latent(z: Tensor, dim: int, who: str) -> None:
    if z.ndim != 2 or z.shape[1] != dim:
        raise ad.ShapeError(f"{who}: expected latent batch of shape (n, {dim}), got {z.shape}")


class SharedBlock(Module):
    """Network stage common to all generators; identity when it has nothing to do."""

    def __init__(
        self,
        n_in: int,
        n_out: int,
        hidden: Sequence[int] = (),
        rng: np.random.Generator | None = None,
        activation: str = "tanh",
    ):
        self.n_in = n_in
        self.n_out = n_out
        if not hidden and n_in == n_out:
            self.net = None
        else:
            if rng is None:
                raise ValueError("SharedBlock with layers needs an rng for initialisation")
            self.net = DenseNet([n_in, *hidden, n_out], rng, activation)

    @property
    def is_identity(self) -> bool:
        return self.net is None

    def forward(self, h: Tensor) -> Tensor:
        if h.shape[-1] != self.n_in:
            raise ad.ShapeError(f"shared block: input width {h.shape[-1]} != {self.n_in}")
        return h if self.net is None else self.net(h)


# ---------------------------------------------------------------------------
# tree


class LeafGenerator(Module):
    """Linear local generator ``W z + w0``."""

    def __init__(self, latent_dim: int, out_dim: int, rng: np.random.Generator):
        self.W = Parameter(glorot(rng, out_dim, latent_dim))
        self.w0 = Parameter(np.zeros(out_dim))

    def forward(self, z: Tensor) -> Tensor:
        _check_latent(z, self.W.shape[1], "leaf")
        return ad.linear(z, self.W, self.w0)


class GatingNode(Module):
    """Soft binary split; ``gate_probability`` is the chance of going left."""

    def __init__(self, latent_dim: int, rng: np.random.Generator):
        self.v = Parameter(rng.normal(0.0, np.sqrt(1.0 / latent_dim), size=latent_dim))
        self.v0 = Parameter(np.zeros(1))
        self.left: GatingNode | LeafGenerator | None = None
        self.right: GatingNode | LeafGenerator | None = None

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        yield prefix + "v", self.v
        yield prefix + "v0", self.v0


def gate_probability(node: GatingNode, z: Tensor) -> Tensor:
    """sigmoid(z . v + v0) per row, shape (n,)."""
    _check_latent(z, node.v.shape[0], "gate_probability")
    return ad.sigmoid(ad.add(ad.matvec(z, node.v), node.v0))


class GeneratorTree(Module):
    """Complete binary tree of gating nodes with ``2**depth`` linear leaves.

    Internal nodes are kept in heap order (root 0, children ``2i+1`` and
    ``2i+2``); leaves are numbered left to right.
    """

    def __init__(self, depth: int, latent_dim: int, out_dim: int, rng: np.random.Generator):
        if depth < 0:
            raise ValueError(f"tree depth must be >= 0, got {depth}")
        self.depth = depth
        self.latent_dim = latent_dim
        self.out_dim = out_dim
        self.gates = [GatingNode(latent_dim, rng) for _ in range(2**depth - 1)]
        self.leaves = [LeafGenerator(latent_dim, out_dim, rng) for _ in range(2**depth)]
        n_int = len(self.gates)

        def node_at(i):
            return self.gates[i] if i < n_int else self.leaves[i - n_int]

        for i, gate in enumerate(self.gates):
            gate.left, gate.right = node_at(2 * i + 1), node_at(2 * i + 2)
        self.root = node_at(0)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    @property
    def n_nodes(self) -> int:
        return len(self.gates) + len(self.leaves)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for i, gate in enumerate(self.gates):
            yield from gate.named_parameters(f"{prefix}node{i}.")
        for j, leaf in enumerate(self.leaves):
            yield from leaf.named_parameters(f"{prefix}leaf{j}.")

    def forward(self, z: Tensor) -> Tensor:
        return tree_forward(self, z)


def tree_forward(tree: GeneratorTree, z: Tensor) -> Tensor:
    """Recursive soft blend: left * sigma + right * (1 - sigma) at every split."""
    if tree.root is None:
        raise ValueError("tree_forward: empty tree")
    _check_latent(z, tree.latent_dim, "tree_forward")
    n = z.shape[0]

    def visit(node):
        if isinstance(node, LeafGenerator):
            return node(z)
        s = ad.reshape(gate_probability(node, z), (n, 1))
        return ad.add(ad.mul(visit(node.left), s), ad.mul(visit(node.right), ad.sub(1.0, s)))

    return visit(tree.root)


def _path_weights(tree: GeneratorTree, z: Tensor) -> list[Tensor | None]:
    """Product of gatings from the root to every node, heap order (root is None = 1)."""
    n_int = len(tree.gates)
    weights: list[Tensor | None] = [None] * tree.n_nodes
    ones = None
    for i, gate in enumerate(tree.gates):
        s = gate_probability(gate, z)
        w = weights[i]
        left, right = s, ad.sub(1.0, s)
        if w is not None:
            left, right = ad.mul(w, left), ad.mul(w, right)
        weights[2 * i + 1], weights[2 * i + 2] = left, right
    if n_int == 0:
        ones = Tensor(np.ones(z.shape[0]))
        weights[0] = ones
    return weights


def leaf_responsibilities(tree: GeneratorTree, z: Tensor) -> Tensor:
    """(n, n_leaves) products of the gatings on each root-to-leaf path."""
    _check_latent(z, tree.latent_dim, "leaf_responsibilities")
    n = z.shape[0]
    n_int = len(tree.gates)
    weights = _path_weights(tree, z)[n_int:]
    return ad.concat([ad.reshape(w, (n, 1)) for w in weights], axis=-1)


def node_weights(tree: GeneratorTree, z: Tensor) -> np.ndarray:
    """(n, n_nodes) path-product weights for every node in heap order."""
    _check_latent(z, tree.latent_dim, "node_weights")
    with ad.no_grad():
        cols = _path_weights(tree, z)
    n = z.shape[0]
    return np.stack([np.ones(n) if c is None else c.data for c in cols], axis=1)


# ---------------------------------------------------------------------------
# flat mixture


class FlatMixture(Module):
    """Softmax gate over K linear leaves; output is their convex combination."""

    def __init__(self, k: int, latent_dim: int, out_dim: int, rng: np.random.Generator):
        if k < 2:
            raise ValueError(f"flat mixture needs K >= 2 generators, got {k}")
        self.latent_dim = latent_dim
        self.gate_weights = Parameter(rng.normal(0.0, np.sqrt(1.0 / latent_dim), size=(k, latent_dim)))
        self.gate_bias = Parameter(np.zeros(k))
        self.leaves = [LeafGenerator(latent_dim, out_dim, rng) for _ in range(k)]

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    def gate(self, z: Tensor) -> Tensor:
        _check_latent(z, self.latent_dim, "mog gate")
        return ad.softmax(ad.linear(z, self.gate_weights, self.gate_bias))

    def forward(self, z: Tensor) -> Tensor:
        return mog_forward(self, z)


def mog_forward(mix: FlatMixture, z: Tensor) -> Tensor:
    if len(mix.leaves) < 2:
        raise ValueError("mog_forward: K < 2")
    r = mix.gate(z)
    out = None
    for i, leaf in enumerate(mix.leaves):
        term = ad.mul(r[:, i : i + 1], leaf(z))
        out = term if out is None else ad.add(out, term)
    return out


# ---------------------------------------------------------------------------
# full generators


def _one_hot(choice: np.ndarray, k: int) -> np.ndarray:
    choice = np.asarray(choice)
    if choice.ndim != 1 or choice.size and (choice.min() < 1 or choice.max() > k):
        raise ValueError(f"generator index must lie in [1, {k}], got {choice}")
    if not np.issubdtype(choice.dtype, np.integer):
        if not np.all(choice == np.round(choice)):
            raise ValueError("generator index must be integral")
        choice = choice.astype(np.int64)
    out = np.zeros((choice.size, k))
    out[np.arange(choice.size), choice - 1] = 1.0
    return out


def _select(outputs: Sequence[Tensor], mask: np.ndarray) -> Tensor:
    """Per-row pick from ``outputs`` with a 0/1 mask; exact for finite values."""
    out = None
    for k, o in enumerate(outputs):
        term = ad.mul(o, mask[:, k : k + 1])
        out = term if out is None else ad.add(out, term)
    return out


class Generator(Module):
    """Common surface: ``sample`` draws whatever randomness the architecture needs."""

    arch = ""
    uses_labels = False

    def sample(self, z: Tensor, rng: np.random.Generator) -> tuple[Tensor, np.ndarray | None]:
        return self.forward(z), None

    def body_parameter_count(self) -> int:
        """Trainable parameters excluding the shared block."""
        shared = {id(p) for p in self.shared.trainable_parameters()}
        return sum(p.size for p in self.trainable_parameters() if id(p) not in shared)

    def assignments(self, z: Tensor, rng: np.random.Generator | None = None) -> np.ndarray:
        """1-based generator most responsible for each latent row."""
        raise NotImplementedError


class HMoGGenerator(Generator):
    arch = "hmog"

    def __init__(self, depth, latent_dim, h_dim, data_dim, rng, shared_hidden=(), activation="tanh"):
        self.tree = GeneratorTree(depth, latent_dim, h_dim, rng)
        self.shared = SharedBlock(h_dim, data_dim, shared_hidden, rng, activation)

    @property
    def n_generators(self) -> int:
        return self.tree.n_leaves

    def forward(self, z: Tensor, choice=None) -> Tensor:
        return self.shared(tree_forward(self.tree, z))

    def responsibilities(self, z: Tensor) -> np.ndarray:
        with ad.no_grad():
            return leaf_responsibilities(self.tree, z).data

    def assignments(self, z, rng=None):
        return np.argmax(self.responsibilities(z), axis=1) + 1


class MoGGenerator(Generator):
    arch = "mog"

    def __init__(self, k, latent_dim, h_dim, data_dim, rng, shared_hidden=(), activation="tanh"):
        self.mixture = FlatMixture(k, latent_dim, h_dim, rng)
        self.shared = SharedBlock(h_dim, data_dim, shared_hidden, rng, activation)

    @property
    def n_generators(self) -> int:
        return self.mixture.n_leaves

    def forward(self, z: Tensor, choice=None) -> Tensor:
        return self.shared(mog_forward(self.mixture, z))

    def responsibilities(self, z: Tensor) -> np.ndarray:
        with ad.no_grad():
            return self.mixture.gate(z).data

    def assignments(self, z, rng=None):
        return np.argmax(self.responsibilities(z), axis=1) + 1


class FCGenerator(Generator):
    """One global fully connected generator followed by the shared block."""

    arch = "fc"

    def __init__(self, latent_dim, h_dim, data_dim, rng, hidden=(), shared_hidden=(), activation="tanh"):
        self.body = DenseNet([latent_dim, *hidden, h_dim], rng, activation)
        self.shared = SharedBlock(h_dim, data_dim, shared_hidden, rng, activation)

    n_generators = 1

    def forward(self, z: Tensor, choice=None) -> Tensor:
        return self.shared(self.body(z))

    def assignments(self, z, rng=None):
        return np.ones(z.shape[0], dtype=np.int64)


class _Bank(Generator):
    uses_labels = True

    @property
    def n_generators(self) -> int:
        return len(self.heads)

    def sample(self, z, rng):
        choice = rng.integers(1, self.n_generators + 1, size=z.shape[0])
        return self.forward(z, choice), choice

    def assignments(self, z, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        return rng.integers(1, self.n_generators + 1, size=z.shape[0])


class MADGANGenerator(_Bank):
    """Shared trunk first, then K heads; one head is chosen per sample."""

    arch = "madgan"

    def __init__(self, k, latent_dim, h_dim, data_dim, rng, head_hidden=(), shared_hidden=(), activation="tanh"):
        if k < 1:
            raise ValueError(f"MADGAN needs K >= 1, got {k}")
        self.shared = SharedBlock(latent_dim, h_dim, shared_hidden, rng, activation)
        self.heads = [DenseNet([h_dim, *head_hidden, data_dim], rng, activation) for _ in range(k)]

    def forward(self, z: Tensor, choice) -> Tensor:
        return madgan_forward(self.shared, self.heads, z, choice)


def madgan_forward(shared: SharedBlock, bank: Sequence[Module], z: Tensor, choice) -> Tensor:
    mask = _one_hot(choice, len(bank))
    if mask.shape[0] != z.shape[0]:
        raise ValueError(f"madgan_forward: {mask.shape[0]} indices for {z.shape[0]} latents")
    h = shared(z)
    return _select([head(h) for head in bank], mask)


class MGANGenerator(_Bank):
    """K generators first, then the shared block."""

    arch = "mgan"

    def __init__(self, k, latent_dim, h_dim, data_dim, rng, hidden=(), shared_hidden=(), activation="tanh"):
        if k < 1:
            raise ValueError(f"MGAN needs K >= 1, got {k}")
        self.heads = [DenseNet([latent_dim, *hidden, h_dim], rng, activation) for _ in range(k)]
        self.shared = SharedBlock(h_dim, data_dim, shared_hidden, rng, activation)

    def forward(self, z: Tensor, choice) -> Tensor:
        return mgan_forward(self.heads, self.shared, z, choice)


def mgan_forward(bank: Sequence[Module], shared: SharedBlock, z: Tensor, choice) -> Tensor:
    mask = _one_hot(choice, len(bank))
    if mask.shape[0] != z.shape[0]:
        raise ValueError(f"mgan_forward: {mask.shape[0]} indices for {z.shape[0]} latents")
    return shared(_select([g(z) for g in bank], mask))


class MeganGating(Module):
    """Gate network over concat(z, nu_1..nu_K) with straight-through Gumbel softmax."""

    def __init__(self, latent_dim, feature_dim, k, rng, hidden=(), activation="tanh", temperature=1.0):
        if temperature <= 0:
            raise ValueError(f"Gumbel temperature must be positive, got {temperature}")
        self.net = DenseNet([latent_dim + k * feature_dim, *hidden, k], rng, activation)
        self.temperature = float(temperature)

    def logits(self, z: Tensor, features: Sequence[Tensor]) -> Tensor:
        return self.net(ad.concat([z, *features], axis=-1))


def gumbel_noise(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.random(shape)
    u = np.clip(u, np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).eps)
    return -np.log(-np.log(u))


class MEGANGenerator(Generator):
    """Gated bank where exactly one generator produces each sample."""

    arch = "megan"
    uses_labels = True

    def __init__(
        self, k, latent_dim, h_dim, data_dim, rng, hidden=(16,), gate_hidden=(), shared_hidden=(),
        activation="tanh", temperature=1.0,
    ):
        self.heads = [DenseNet([latent_dim, *hidden, h_dim], rng, activation) for _ in range(k)]
        feature_dim = self.heads[0].sizes[1]
        self.gating = MeganGating(latent_dim, feature_dim, k, rng, gate_hidden, activation, temperature)
        self.shared = SharedBlock(h_dim, data_dim, shared_hidden, rng, activation)

    @property
    def n_generators(self) -> int:
        return len(self.heads)

    def mixture_weights(self, z: Tensor, noise: np.ndarray) -> tuple[Tensor, np.ndarray]:
        """Soft Gumbel-softmax probabilities and the hard one-hot selection."""
        tau = self.gating.temperature
        if tau <= 0:
            raise ValueError(f"Gumbel temperature must be positive, got {tau}")
        features = [g.first_activation(z) for g in self.heads]
        logits = self.gating.logits(z, features)
        soft = ad.softmax(ad.scale(ad.add(logits, noise), 1.0 / tau))
        hard = np.zeros(soft.shape)
        hard[np.arange(soft.shape[0]), np.argmax(soft.data, axis=1)] = 1.0
        return soft, hard

    def forward(self, z: Tensor, noise: np.ndarray | None = None, rng=None) -> Tensor:
        x, _ = megan_forward(self, z, noise=noise, rng=rng)
        return x

    def sample(self, z, rng):
        x, hard = megan_forward(self, z, rng=rng)
        return x, np.argmax(hard, axis=1) + 1

    def assignments(self, z, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        with ad.no_grad():
            _, hard = self.mixture_weights(z, gumbel_noise(rng, (z.shape[0], self.n_generators)))
        return np.argmax(hard, axis=1) + 1


def megan_forward(
    model: MEGANGenerator,
    z: Tensor,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> tuple[Tensor, np.ndarray]:
    """Returns (samples, one-hot selection).  Pass ``noise`` or ``rng``."""
    if noise is None:
        if rng is None:
            raise ValueError("megan_forward needs Gumbel noise or an rng")
        noise = gumbel_noise(rng, (z.shape[0], model.n_generators))
    soft, hard = model.mixture_weights(z, noise)
    y = ad.straight_through(hard, soft)
    h = None
    for k, head in enumerate(model.heads):
        term = ad.mul(y[:, k : k + 1], head(z))
        h = term if h is None else ad.add(h, term)
    return model.shared(h), hard


def build_generator(
    arch: str,
    *,
    latent_dim: int,
    h_dim: int,
    data_dim: int,
    rng: np.random.Generator,
    n_generators: int = 8,
    depth: int | None = None,
    hidden: Sequence[int] = (),
    gate_hidden: Sequence[int] = (),
    shared_hidden: Sequence[int] = (),
    activation: str = "tanh",
    temperature: float = 1.0,
) -> Generator:
    if arch == "hmog":
        if depth is None:
            depth = int(np.log2(n_generators))
        model = HMoGGenerator(depth, latent_dim, h_dim, data_dim, rng, shared_hidden, activation)
    elif arch == "mog":
        model = MoGGenerator(n_generators, latent_dim, h_dim, data_dim, rng, shared_hidden, activation)
    elif arch == "fc":
        model = FCGenerator(latent_dim, h_dim, data_dim, rng, hidden, shared_hidden, activation)
    elif arch == "madgan":
        model = MADGANGenerator(n_generators, latent_dim, h_dim, data_dim, rng, hidden, shared_hidden, activation)
    elif arch == "mgan":
        model = MGANGenerator(n_generators, latent_dim, h_dim, data_dim, rng, hidden, shared_hidden, activation)
    elif arch == "megan":
        model = MEGANGenerator(
            n_generators, latent_dim, h_dim, data_dim, rng, hidden or (16,), gate_hidden,
            shared_hidden, activation, temperature,
        )
    else:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
    model.assign_names("generator.")
    return model
