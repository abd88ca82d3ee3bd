import copy

import pytest

BASE_SCENARIO = {
    "version": 1,
    "name": "unit-fixture",
    "anchor": {"lat_deg": 37.4, "lon_deg": -122.1},
    "seed": 12345,
    "ego": {"start": [0.0, 0.0, 0.0]},
    "sensor": {"range_m": 30.0, "fov_rad": 6.283185307179586,
               "noise_sigma_m": 0.0, "dropout_prob": 0.0},
    "buildings": [],
    "static_objects": [],
    "dynamic_agents": [],
    "road_graph": {"nodes": [], "edges": []},
}


def make_scenario_doc(**overrides):
    doc = copy.deepcopy(BASE_SCENARIO)
    doc.update(copy.deepcopy(overrides))
    return doc


@pytest.fixture
def scenario_doc():
    return make_scenario_doc()
