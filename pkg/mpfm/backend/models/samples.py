class Samples:
    presets = {
        "benchmark": {
            "name": "benchmark",
            "repeat": 5,
            "train": {
                "n_components": 8,
                "lambda_mim": 0.1,
                "epochs": 50,
                "iterations": 20,
                "normal_batch": 128,
                "anomaly_batch": 128,
                "head_hidden": 64,
            },
            "data": {
                "feature_dim": 8,
                "n_patches": 16,
                "n_modes": 4,
                "n_train_normal": 2000,
                "n_train_anomaly": 10,
            },
            "paths": {"out_dir": "runs/benchmark"},
        },
        "quick": {
            "name": "quick",
            "repeat": 1,
            "train": {
                "n_components": 4,
                "epochs": 2,
                "iterations": 5,
                "normal_batch": 16,
                "anomaly_batch": 16,
                "hidden_sizes": [16],
                "head_hidden": 8,
                "psi_steps": 4,
            },
            "data": {
                "n_train_normal": 200,
                "n_train_anomaly": 5,
                "n_test_normal": 60,
                "n_test_anomaly": 20,
            },
            "paths": {"out_dir": "runs/quick"},
        },
        # every default of TrainConfig, i.e. K=32
        "full": {
            "name": "full",
            "repeat": 5,
            "paths": {"out_dir": "runs/full"},
        },
    }
