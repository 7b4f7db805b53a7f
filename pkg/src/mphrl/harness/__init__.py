"""Experiment orchestration: configs, toy environments, runs, baselines and reports."""
