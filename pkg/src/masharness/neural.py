"""Feedforward light controller decoded from a flat weight genome.

Topology is fixed-shape: three sensor inputs (light level, motion flag,
wireless signal), one tanh hidden layer, two tanh outputs (LED command,
wireless broadcast).  A genome is the concatenation of input-to-hidden
weights (row-major per hidden neuron), hidden biases, hidden-to-output
weights (row-major per output neuron), and output biases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GenomeShapeMismatch(ValueError):
    """Gene count does not fit the declared topology."""


@dataclass(frozen=True, slots=True)
class NetworkTopology:
    inputCount: int = 3
    hiddenCount: int = 4
    outputCount: int = 2

    def __post_init__(self):
        if self.inputCount < 1 or self.hiddenCount < 1 or self.outputCount < 1:
            raise ValueError("all layer sizes must be positive")

    @property
    def genomeLength(self) -> int:
        return (self.inputCount + 1) * self.hiddenCount + (self.hiddenCount + 1) * self.outputCount


class NeuralController:
    """Decoded network; stateless between calls."""

    def __init__(self, topology: NetworkTopology, w1, b1, w2, b2):
        self.topology = topology
        self.w1 = np.asarray(w1, dtype=float)
        self.b1 = np.asarray(b1, dtype=float)
        self.w2 = np.asarray(w2, dtype=float)
        self.b2 = np.asarray(b2, dtype=float)

    def forward(self, inputs) -> tuple[float, ...]:
        """Map one sensor triple to the output pair, both layers tanh."""
        x = np.asarray(inputs, dtype=float)
        if x.shape != (self.topology.inputCount,):
            raise ValueError(
                f"expected {self.topology.inputCount} inputs, got shape {x.shape}"
            )
        hidden = np.tanh(self.w1 @ x + self.b1)
        out = np.tanh(self.w2 @ hidden + self.b2)
        return tuple(float(v) for v in out)

    def forward_batch(self, inputs) -> np.ndarray:
        """Vectorised forward pass over an (n, inputCount) array."""
        x = np.asarray(inputs, dtype=float)
        hidden = np.tanh(x @ self.w1.T + self.b1)
        return np.tanh(hidden @ self.w2.T + self.b2)


def decode(genes, topology: NetworkTopology | None = None) -> NeuralController:
    """Unpack a flat gene sequence into a controller.

    Raises GenomeShapeMismatch when the gene count does not equal the
    topology's genomeLength.
    """
    if topology is None:
        topology = NetworkTopology()
    g = np.asarray(genes, dtype=float)
    n_in, n_h, n_out = topology.inputCount, topology.hiddenCount, topology.outputCount
    want = topology.genomeLength
    if g.ndim != 1 or g.shape[0] != want:
        raise GenomeShapeMismatch(
            f"topology {n_in}-{n_h}-{n_out} needs {want} genes, got {g.size}"
        )
    i = 0
    w1 = g[i : i + n_h * n_in].reshape(n_h, n_in)
    i += n_h * n_in
    b1 = g[i : i + n_h]
    i += n_h
    w2 = g[i : i + n_out * n_h].reshape(n_out, n_h)
    i += n_out * n_h
    b2 = g[i : i + n_out]
    return NeuralController(topology, w1, b1, w2, b2)


def save_genome(path, genes, topology: NetworkTopology | None = None) -> None:
    """Write a genome file: topology header line, then one gene per line."""
    if topology is None:
        topology = NetworkTopology()
    g = np.asarray(genes, dtype=float)
    if g.shape != (topology.genomeLength,):
        raise GenomeShapeMismatch(
            f"genome of {g.size} genes does not fit topology header"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{topology.inputCount} {topology.hiddenCount} {topology.outputCount}\n")
        for gene in g:
            # repr of a python float round-trips the exact value
            fh.write(f"{float(gene)!r}\n")


def load_genome(path) -> tuple[NetworkTopology, tuple[float, ...]]:
    """Inverse of save_genome.  Raises GenomeShapeMismatch on a bad file."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise GenomeShapeMismatch("empty genome file")
    header = lines[0].split()
    if len(header) != 3:
        raise GenomeShapeMismatch(f"bad topology header {lines[0]!r}")
    try:
        topology = NetworkTopology(*(int(tok) for tok in header))
        genes = tuple(float(tok) for tok in lines[1:])
    except ValueError as exc:
        raise GenomeShapeMismatch(str(exc)) from exc
    if len(genes) != topology.genomeLength:
        raise GenomeShapeMismatch(
            f"header promises {topology.genomeLength} genes, file has {len(genes)}"
        )
    return topology, genes
