"""Train the two-level model to tell sparse ER graphs from dense ones, then inspect the result."""

import numpy as np

from hap.datagen import toy_classification_graphs
from hap.train import TaskData, TrainConfig, evaluate, train

graphs = toy_classification_graphs(200, 30, np.random.default_rng(1))
data = TaskData("classify", graphs)
config = TrainConfig(task="classify", epochs=10, hidden=32, clusters=(8, 1), patience=5)


def show(epoch, loss, metrics):
    print(f"epoch {epoch:2d}  train loss {loss:.4f}  val accuracy {metrics['accuracy']:.3f}")


result = train(config, data, on_epoch=show)
test = evaluate(result.model, data, data.split["test"])
print(f"best epoch {result.best_epoch}, test accuracy {test['accuracy']:.3f}")

enc = result.model.encode_graph(data.graphs[0])
print("readout shapes per level:", [r.shape for r in enc.readouts])
print("class probabilities for graph 0:", np.round(result.model.predict_proba(enc).value, 3))
