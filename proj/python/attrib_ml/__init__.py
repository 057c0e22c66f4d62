from ._attrib import AttribError, Model, pearson, tokenize, toy_corpus, train

__all__ = ["AttribError", "Model", "pearson", "tokenize", "toy_corpus", "train"]
