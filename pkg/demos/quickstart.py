"""Train both stages on a small synthetic taxonomy, then evaluate and predict.

Run with ``python3 demos/quickstart.py``; takes well under a minute.
"""

from hiertax import HierarchicalClassifier, SyntheticSpec, TrainConfig, generate_synthetic, train_coarse, train_fine
from hiertax.corpus import split


def main():
    corpus = generate_synthetic(SyntheticSpec(docs=600, leak=1.0, noise=0.0, seed=0))
    train, test = split(corpus.records, 0.9, seed=0)
    space = corpus.taxonomy.space
    print(f"{len(train)} training and {len(test)} test documents, "
          f"{space.n_coarse} coarse and {space.n_fine} fine labels")

    config = TrainConfig(u=32, layers=1, heads=2, epochs=6, lr=0.005)
    coarse = train_coarse(train, corpus.taxonomy, config, log=print)
    fine = train_fine(train, corpus.taxonomy, coarse, config, log=print)

    model = HierarchicalClassifier.from_checkpoint(fine)
    print(model.evaluate(test).table())

    sample = test[0]
    coarse_labels, fine_labels = model.predict(sample)
    print("text:", sample.text[:80])
    print("gold:", sorted(sample.coarse), sorted(sample.fine))
    print("predicted:", sorted(coarse_labels), sorted(fine_labels))


if __name__ == "__main__":
    main()
