"""Plot CSV outputs of the ringdelay CLI (needs matplotlib, not a package dependency).

    ringdelay topology --N 50 --tau-min 0.01 --rate linear --out-dir out/linear
    ringdelay simulate configs/ring_n2.yaml --out-dir out/sim
    python docs/plot_outputs.py out/linear/topology.csv out/sim/trajectory.csv
"""

import csv
import sys

import matplotlib.pyplot as plt


def read(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return header, [[float(v) for v in r] for r in body]


def main(paths):
    for path in paths:
        header, rows = read(path)
        cols = list(zip(*rows))
        fig, ax = plt.subplots()
        if header[:2] == ["n", "C_star"]:
            ax.plot(cols[0], cols[header.index("variance")], "o-")
            ax.set_xlabel("rings n")
            ax.set_ylabel("near-optimal scalar variance")
        else:
            for name, col in zip(header[1:], cols[1:]):
                ax.plot(cols[0], col, lw=0.8, label=name)
            ax.set_xlabel("t")
            ax.set_ylabel("error state")
            ax.legend(fontsize="small")
        ax.set_title(path)
        fig.tight_layout()
    plt.show()


if __name__ == "__main__":
    main(sys.argv[1:])
