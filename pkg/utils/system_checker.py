import platform

import numpy as np
import psutil
import torch


def get_runtime_info():
    """
    Get information about the process running the potential.
    Returns a dictionary with platform, library and hardware details.
    """
    memory = psutil.virtual_memory()
    runtime_info = {
        "os": {
            "name": platform.system(),
            "release": platform.release(),
        },
        "python": platform.python_version(),
        "libraries": {
            "torch": torch.__version__,
            "numpy": np.__version__,
        },
        "hardware": {
            "processor": platform.processor(),
            "cpu_count": psutil.cpu_count(logical=False),
            "cpu_logical_count": psutil.cpu_count(logical=True),
            "torch_threads": torch.get_num_threads(),
            "memory_total_gb": round(memory.total / (1024**3), 2),
            "memory_available_gb": round(memory.available / (1024**3), 2),
        },
        "process": {
            "rss_mb": round(psutil.Process().memory_info().rss / (1024**2), 1),
        },
    }
    return runtime_info


def check_runtime(min_memory_gb=2.0):
    """
    Check whether the machine is suitable for training runs.
    Returns a dictionary with status, errors, warnings and recommendations.
    """
    results = {
        "status": True,
        "errors": [],
        "warnings": [],
        "recommendations": []
    }
    info = get_runtime_info()

    major, minor = (int(part) for part in info["python"].split(".")[:2])
    if (major, minor) < (3, 9):
        results["status"] = False
        results["errors"].append(f"Python 3.9+ is required, found {info['python']}")

    if info["hardware"]["memory_available_gb"] < min_memory_gb:
        results["warnings"].append(
            f"Only {info['hardware']['memory_available_gb']} GB memory available; "
            f"double-backward force training may run out of memory"
        )

    logical = info["hardware"]["cpu_logical_count"] or 1
    if info["hardware"]["torch_threads"] < logical // 2:
        results["recommendations"].append(
            f"torch uses {info['hardware']['torch_threads']} of {logical} logical CPUs; "
            f"set OMP_NUM_THREADS to use more"
        )

    return results
