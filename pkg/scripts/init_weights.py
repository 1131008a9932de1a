#!/usr/bin/env python3
"""
Random ViT weights for desk-scale runs

Writes a .vitw container with freshly initialised weights for the [vit]
section of a pipeline config (or the sizes given on the command line).

Usage:
    python scripts/init_weights.py --out weights.vitw --config pathx.toml
    python scripts/init_weights.py --out toy.vitw --image-size 32 --patch-size 16 --embed-dim 8 --heads 2 --layers 1
"""

import argparse
import os
import sys

# Add the project root to Python path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from pathx.config import load_pipeline_config
from pathx.errors import PathXError
from pathx.ml.numeric import Rng
from pathx.ml.vit import init_vit_weights, save_weights


def main():
    parser = argparse.ArgumentParser(description="Write random ViT weights")
    parser.add_argument("--out", required=True, help="destination .vitw file")
    parser.add_argument("--config", help="pipeline config whose [vit] section is used")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--image-size", type=int)
    parser.add_argument("--patch-size", type=int)
    parser.add_argument("--embed-dim", type=int)
    parser.add_argument("--heads", type=int)
    parser.add_argument("--layers", type=int)
    parser.add_argument("--mlp-hidden", type=int)
    args = parser.parse_args()

    try:
        vit = load_pipeline_config(args.config).vit
        overrides = {
            name: value
            for name, value in (
                ("image_size", args.image_size),
                ("patch_size", args.patch_size),
                ("embed_dim", args.embed_dim),
                ("num_heads", args.heads),
                ("num_layers", args.layers),
                ("mlp_hidden", args.mlp_hidden),
            )
            if value is not None
        }
        vit = vit.model_validate({**vit.model_dump(), **overrides})
        save_weights(args.out, init_vit_weights(vit, Rng(args.seed)), vit)
    except PathXError as e:
        print(f"❌ {e}")
        sys.exit(e.exit_code)
    except ValueError as e:
        print(f"❌ {e}")
        sys.exit(1)

    print(f"✅ Wrote {args.out} (D={vit.embed_dim}, {vit.num_layers} layers, {vit.num_patches} patches)")


if __name__ == "__main__":
    main()
