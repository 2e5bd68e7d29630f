"""Synthetic traffic, the scripted clearance oracle, and dataset files."""

from .generator import RouteTemplate, SimulationResult, SynthConfig, generate_dataset, generate_stream, simulate
from .io import read_dataset, write_dataset
from .oracle import OracleConfig, clearance_plan, label_scenario, oracle_controller

__all__ = ["RouteTemplate", "SimulationResult", "SynthConfig", "generate_dataset", "generate_stream", "simulate",
           "read_dataset", "write_dataset", "OracleConfig", "clearance_plan", "label_scenario",
           "oracle_controller"]
