from .net import DenseNet, Embedding, param_count
