"""
flowgraph entry point
"""

from flowgraph.main import main

if __name__ == "__main__":
    main()
