"""Per-layer MAC table for the built-in topologies and the reduction between them."""

from tinbinn.netgraph import builtin_network, count_ops, reduction


def main():
    counts = {name: count_ops(builtin_network(name)) for name in ("original", "reduced")}
    for name, oc in counts.items():
        print(f"{name}")
        for label, macs in zip(oc.labels, oc.per_layer):
            print(f"  {label:<8}{macs:>14,}")
        print(f"  {'total':<8}{oc.total:>14,}\n")
    print(f"reduction: {100 * reduction(counts['original'], counts['reduced']):.3f}%")


if __name__ == "__main__":
    main()
