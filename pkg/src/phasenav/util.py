"""Shared numeric helpers: physical constants, phase wrapping, seed streams."""

from __future__ import annotations

import csv

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s

TWO_PI = 2.0 * np.pi


def wrap_pi(phase):
    """Wrap angles into the half-open interval (-pi, pi].

    Works elementwise on arrays. Exact multiples of 2*pi map to 0 and
    odd multiples of pi map to +pi, so the upper endpoint is the one
    that is included.
    """
    return np.pi - np.mod(np.pi - np.asarray(phase), TWO_PI)


def wrap_progressive(phase):
    """Wrap phase differences into (0, 2*pi].

    Progression convention: the higher-frequency member of a subcarrier
    pair is always taken to be phase-ahead, so a measured difference of
    exactly zero reads as one full virtual cycle and maps to 2*pi.
    """
    return TWO_PI - np.mod(-np.asarray(phase), TWO_PI)


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Derive ``n`` independent, reproducible generators from one seed.

    The streams are stable across process boundaries, which keeps
    parallel Monte-Carlo folds byte-identical to serial ones.
    """
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def csv_rows(path) -> list[list[str]]:
    """All CSV rows of a file, skipping blanks and ``#`` comment lines.

    Study outputs carry their config hash as a leading comment; this
    keeps every reader tolerant of it.
    """
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            rows.append(row)
    return rows
