# -*- coding: utf-8 -*-
# vim: set ft=python ts=4 sw=4 expandtab:
# pylint: disable=redefined-outer-name
# Unit tests for render.py

import logging
import os
import xml.etree.ElementTree as ElementTree

import numpy as np
import pytest

from phasemap.decoder import LatentState, reconstruct
from phasemap.domain import PrototypeLibrary, QGrid, StickPattern, XrdDataset, build_graph
from phasemap.evaluation import Solution, postprocess
from phasemap.render import figure_name, render_phase, render_reconstruction, write_report

SVG = "{http://www.w3.org/2000/svg}"
GRID = QGrid(10.0, 40.0, 121)
LIBRARY = PrototypeLibrary(
    [
        StickPattern.create("A&B", [20.0, 30.0], [1.0, 0.5]),
        StickPattern.create("C/1", [24.0], [1.0]),
        StickPattern.create("unused", [35.0], [1.0]),
    ]
)


@pytest.fixture
def solution():
    points = np.array([[1.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 1.0, 0.0], [0.0, 0.5, 0.5], [0.0, 0.0, 1.0]])
    p = [[1.0, 0.0, 0.0], [0.7, 0.3, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.4, 0.6, 0.0], [0.0, 1.0, 0.0]]
    alpha = [[1.0, 1.0, 1.0], [1.01, 1.0, 1.0], [0.99, 1.0, 1.0], [1.0, 1.02, 1.0], [1.0, 1.0, 1.0], [1.0, 0.98, 1.0]]
    latents = [LatentState(row, shift, np.full(3, 0.3), np.ones((3, 2))) for row, shift in zip(p, alpha)]
    patterns = reconstruct(LIBRARY.peak_table(), latents, GRID)
    dataset = XrdDataset(GRID, patterns, build_graph(points))
    return postprocess(latents, dataset, LIBRARY)


def parse(svg):
    return ElementTree.fromstring(svg.encode("utf-8"))


class TestRenderPhase:
    def test_well_formed(self, solution):
        root = parse(render_phase(solution, "A&B", LIBRARY))
        assert root.tag == SVG + "svg"
        assert root.get("width") == "900"

    def test_one_marker_per_active_point(self, solution):
        root = parse(render_phase(solution, "A&B", LIBRARY))
        assert len(root.findall(SVG + "circle")) == 4
        root = parse(render_phase(solution, "C/1", LIBRARY))
        assert len(root.findall(SVG + "circle")) == 4

    def test_sticks_and_pattern(self, solution):
        root = parse(render_phase(solution, "A&B", LIBRARY))
        assert len(root.findall(SVG + "line")) == 2
        polyline = root.findall(SVG + "polyline")
        assert len(polyline) == 1
        assert len(polyline[0].get("points").split()) == GRID.d

    def test_title_is_escaped(self, solution):
        svg = render_phase(solution, "A&B", LIBRARY)
        assert "Phase A&amp;B" in svg

    def test_inactive_phase(self, solution):
        root = parse(render_phase(solution, "unused", LIBRARY))
        assert root.findall(SVG + "circle") == []

    def test_deterministic(self, solution):
        assert render_phase(solution, "C/1", LIBRARY) == render_phase(solution, "C/1", LIBRARY)

    def test_unknown_phase(self, solution):
        with pytest.raises(KeyError):
            render_phase(solution, "missing", LIBRARY)


class TestRenderReconstruction:
    def test_markers(self, solution):
        root = parse(render_reconstruction(solution))
        assert len(root.findall(SVG + "circle")) == solution.size
        assert "Reconstruction loss" in render_reconstruction(solution)


class TestWriteReport:
    def test_figure_name(self):
        assert figure_name("A&B") == "phase-A_B.svg"
        assert figure_name("C/1") == "phase-C_1.svg"
        assert figure_name("Fe2O3-alpha") == "phase-Fe2O3-alpha.svg"

    def test_write(self, solution, tmp_path):
        written = write_report(solution, LIBRARY, str(tmp_path / "figures"))
        assert [os.path.basename(path) for path in written] == ["phase-A_B.svg", "phase-C_1.svg", "reconstruction.svg"]
        for path in written:
            with open(path, encoding="utf-8") as f:
                parse(f.read())

    def test_no_active_phases(self, solution, tmp_path, caplog):
        empty = Solution(
            solution.phase_ids,
            solution.grid,
            solution.compositions,
            [],
            solution.demixed,
            [],
            [],
            solution.l1,
            solution.l2,
            solution.js,
        )
        with caplog.at_level(logging.WARNING, logger="phasemap.render"):
            written = write_report(empty, LIBRARY, str(tmp_path))
        assert [os.path.basename(path) for path in written] == ["reconstruction.svg"]
        assert "no active phases" in caplog.text
