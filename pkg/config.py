"""
Configuration file for the abstraction toolkit
"""
import os
from dotenv import load_dotenv

load_dotenv()

class Config:
    # Decision diagram backend
    DD_BACKEND = os.getenv('DD_BACKEND', 'auto')  # auto, cudd, autoref
    DD_MEMORY_MB = float(os.getenv('DD_MEMORY_MB', '4096'))
    DD_NODE_BYTES = int(os.getenv('DD_NODE_BYTES', '120'))  # rough cost of one node in autoref

    # Abstraction (grid traversal)
    ABSTRACTION_CHUNK_BITS = int(os.getenv('ABSTRACTION_CHUNK_BITS', '16'))
    PROGRESS_EVERY = int(os.getenv('PROGRESS_EVERY', '1000'))
    N_JOBS = int(os.getenv('N_JOBS', '1'))

    # Overapproximation oracles
    MONOTONE_SAMPLES = int(os.getenv('MONOTONE_SAMPLES', '2000'))
    ORACLE_SEED = int(os.getenv('ORACLE_SEED', '7'))

    # Refinement checks and harnesses
    CHECK_RESOLUTION = int(os.getenv('CHECK_RESOLUTION', '10'))  # samples per eta
    HARNESS_TRIALS = int(os.getenv('HARNESS_TRIALS', '1000'))
    HARNESS_SEED = int(os.getenv('HARNESS_SEED', '2019'))

    # Benchmark
    BENCH_CELLS = int(os.getenv('BENCH_CELLS', '32'))
    BENCH_GAIN = float(os.getenv('BENCH_GAIN', '0.2'))
    MONOLITHIC_BUDGET = float(os.getenv('MONOLITHIC_BUDGET', '600'))

    # Artifacts
    ARTIFACT_DIR = os.getenv('ARTIFACT_DIR', 'runs')
    DUMP_ASSIGNMENT_LIMIT = int(os.getenv('DUMP_ASSIGNMENT_LIMIT', '200000'))

    # Logging
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
    LOG_FILE = os.getenv('LOG_FILE', 'abstraction.log')
