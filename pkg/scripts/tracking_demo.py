"""Track three constant-velocity vehicles and print the error table."""
from bevlayout.experiments import tracking_run

if __name__ == "__main__":
    for k, v in tracking_run().items():
        print(f"{k} = {v:.4f}" if isinstance(v, float) else f"{k} = {v}")
