"""Per-frame interaction graphs and the GCN autoencoder that embeds them."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import DEFAULT_FRAME_SIZE, ROLES, FrameFeatures
from .errors import DimensionError, NonFiniteError, TrainingAborted, ValidationError
from .numerics import Adam, Module, Tensor, activation, loss, matmul
from .numerics.layers import glorot

logger = logging.getLogger(__name__)

N_NODES = len(ROLES)
NODE_DIM = 2 + 1 + 34  # bbox center, depth, 17 keypoint pairs
HIDDEN_DIM = 16
EMBED_DIM = 8


@dataclass
class InteractionGraph:
    node_attrs: np.ndarray  # (4, 37), rows in ROLES order
    adjacency: np.ndarray  # (4, 4)


@dataclass
class GraphEmbedding:
    G: np.ndarray  # (4, g)

    @property
    def flattened(self) -> np.ndarray:
        return self.G.reshape(-1)


def fully_connected_adjacency(n: int = N_NODES, normalize: bool = False) -> np.ndarray:
    """All-ones adjacency with self-loops; optionally D^-1/2 A D^-1/2."""
    a = np.ones((n, n))
    if normalize:
        d = 1.0 / np.sqrt(a.sum(axis=1))
        a = a * d[:, None] * d[None, :]
    return a


def depth_range(frames: list[FrameFeatures]) -> tuple[float, float]:
    """Min and max observed depth over one video's frames (imputed zero-fills ignored)."""
    vals = [o.depth for f in frames for o in f.objects.values() if not (o.imputed and o.track_id < 0)]
    if not vals:
        return 0.0, 1.0
    return float(min(vals)), float(max(vals))


def node_attributes(
    frame: FrameFeatures,
    frame_size: tuple[float, float] = DEFAULT_FRAME_SIZE,
    depth_bounds: tuple[float, float] = (0.0, 1.0),
) -> np.ndarray:
    """Rows [cx, cy, depth, kp_x1, kp_y1, ...] for each role, scaled into [0, 1]."""
    width, height = frame_size
    lo, hi = depth_bounds
    span = hi - lo if hi > lo else 1.0
    phi = np.zeros((N_NODES, NODE_DIM))
    for i, role in enumerate(ROLES):
        obj = frame.objects.get(role)
        if obj is None:
            raise ValidationError(f"frame {frame.frame_idx} of {frame.video_id}: role {role!r} missing")
        if obj.imputed and obj.track_id < 0:
            continue  # zero-filled detection stays zero
        cx, cy = obj.center
        phi[i, 0] = cx / width
        phi[i, 1] = cy / height
        phi[i, 2] = (obj.depth - lo) / span
        if role != "drone" and obj.keypoints is not None:
            phi[i, 3:] = (obj.keypoints / [width, height]).reshape(-1)
    return np.clip(phi, 0.0, 1.0)


def assemble_graph(frame: FrameFeatures, frame_size=DEFAULT_FRAME_SIZE, depth_bounds=(0.0, 1.0),
                   normalize_adjacency: bool = False) -> InteractionGraph:
    return InteractionGraph(
        node_attributes(frame, frame_size, depth_bounds),
        fully_connected_adjacency(N_NODES, normalize_adjacency),
    )


def video_node_attributes(frames: list[FrameFeatures], frame_size=DEFAULT_FRAME_SIZE) -> np.ndarray:
    """Stacked (n_frames, 4, 37) node attributes with per-video depth scaling."""
    bounds = depth_range(frames)
    return np.stack([node_attributes(f, frame_size, bounds) for f in frames])


def gcn_layer(phi: Tensor, adjacency, weight: Tensor, act: str = "relu") -> Tensor:
    """act(A @ phi @ W); ``phi`` may carry leading batch axes."""
    a = adjacency if isinstance(adjacency, Tensor) else Tensor(np.asarray(adjacency, dtype=np.float64))
    phi = phi if isinstance(phi, Tensor) else Tensor(phi)
    if a.shape[-1] != phi.shape[-2] or a.shape[-2] != a.shape[-1]:
        raise DimensionError(f"gcn_layer: adjacency {a.shape} does not fit node attributes {phi.shape}")
    if phi.shape[-1] != weight.shape[0]:
        raise DimensionError(f"gcn_layer: node attributes {phi.shape} do not fit weight {weight.shape}")
    return activation(act, matmul(matmul(a, phi), weight))


class GcnAutoencoder(Module):
    """Two GCN layers down to width ``embed_dim`` and a mirrored decoder back up."""

    def __init__(self, node_dim: int = NODE_DIM, hidden_dim: int = HIDDEN_DIM, embed_dim: int = EMBED_DIM,
                 seed: int = 0, normalize_adjacency: bool = False):
        rng = np.random.default_rng(seed)
        self.node_dim, self.hidden_dim, self.embed_dim = node_dim, hidden_dim, embed_dim
        self.normalize_adjacency = normalize_adjacency
        self.enc0 = Tensor(glorot(rng, node_dim, hidden_dim), requires_grad=True)
        self.enc1 = Tensor(glorot(rng, hidden_dim, embed_dim), requires_grad=True)
        self.dec0 = Tensor(glorot(rng, embed_dim, hidden_dim), requires_grad=True)
        self.dec1 = Tensor(glorot(rng, hidden_dim, node_dim), requires_grad=True)
        self.adjacency = Tensor(fully_connected_adjacency(N_NODES, normalize_adjacency))

    def hyperparameters(self) -> dict:
        return {
            "node_dim": self.node_dim, "hidden_dim": self.hidden_dim, "embed_dim": self.embed_dim,
            "normalize_adjacency": self.normalize_adjacency,
        }

    def encode(self, phi) -> Tensor:
        h = gcn_layer(phi, self.adjacency, self.enc0, "relu")
        return gcn_layer(h, self.adjacency, self.enc1, "relu")

    def decode(self, g: Tensor) -> Tensor:
        h = gcn_layer(g, self.adjacency, self.dec0, "relu")
        return gcn_layer(h, self.adjacency, self.dec1, "identity")

    def reconstruction_loss(self, phi: np.ndarray) -> Tensor:
        return loss("mse", self.decode(self.encode(Tensor(phi))), phi)


def train_autoencoder(
    graphs: np.ndarray,
    epochs: int = 50,
    lr: float = 1e-3,
    seed: int = 0,
    batch_size: int = 32,
    embed_dim: int = EMBED_DIM,
    model: GcnAutoencoder | None = None,
) -> tuple[GcnAutoencoder, list[float]]:
    """Fit the autoencoder with Adam on mini-batches; returns the model and per-epoch mean loss."""
    phi = np.asarray(graphs, dtype=np.float64)
    if phi.ndim != 3 or phi.shape[0] < 1:
        raise ValueError(f"expected a (n_graphs, nodes, features) array, got shape {phi.shape}")
    model = model or GcnAutoencoder(node_dim=phi.shape[2], embed_dim=embed_dim, seed=seed)
    params = model.parameters()
    opt = Adam(params, lr=lr)
    rng = np.random.default_rng(seed + 1)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(phi))
        total = 0.0
        for start in range(0, len(phi), batch_size):
            batch = phi[order[start : start + batch_size]]
            opt.zero_grad()
            try:
                out = model.reconstruction_loss(batch)
                out.backward()
                opt.step()
            except NonFiniteError as exc:
                raise TrainingAborted(f"autoencoder diverged at epoch {epoch + 1}: {exc}") from None
            total += out.item() * len(batch)
        history.append(total / len(phi))
        logger.debug("gae epoch %d loss %.6f", epoch + 1, history[-1])
    return model, history


def embed(model: GcnAutoencoder, graph) -> GraphEmbedding:
    phi = graph.node_attrs if isinstance(graph, InteractionGraph) else np.asarray(graph)
    return GraphEmbedding(model.encode(Tensor(phi)).data.copy())


def embed_batch(model: GcnAutoencoder, phi: np.ndarray) -> np.ndarray:
    """Flattened embeddings, shape (n, 4 * g), for stacked node attributes."""
    g = model.encode(Tensor(np.asarray(phi, dtype=np.float64))).data
    return g.reshape(g.shape[0], -1)
