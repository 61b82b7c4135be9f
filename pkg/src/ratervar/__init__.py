"""
========
ratervar
========

Multi-rater segmentation with per-rater Gaussian latent posteriors. A small
convolutional network is trained jointly with one latent Gaussian per
annotator (plus a gold slot) by variational inference; sampling the latents
gives gold predictions with uncertainty maps, simulated annotations in the
style of any rater and blends of two raters. STAPLE fusion, agreement
metrics and a synthetic multi-rater data generator come along.

============
Installation
============
From Source
-----------

>>> git clone <repository url> ratervar
>>> cd ratervar
>>> pip install -e .

===============
Simple Examples
===============

Synthetic data, training and a gold prediction
----------------------------------------------

>>> from ratervar.data.synthesize import GenerationConfig, gen_dataset
>>> from ratervar.train.config import TrainConfig
>>> from ratervar.train.trainer import train
>>> from ratervar.inference.predict import predict
>>>
>>> splits = gen_dataset(GenerationConfig(train=20, test=5), "synthetic")
>>> trainSet = splits["train"].dataset
>>> result = train(trainSet, TrainConfig(epochs=5), outDir="run")
>>>
>>> testSet = splits["test"].dataset
>>> image = testSet.images[testSet.image_ids[0]]
>>> prediction = predict(result.model, result.bank, image, K=16, seed=0)
>>> prediction.argmax_map, prediction.uncertainty

The same pipeline runs from the command line:

>>> ratervar gen-data --out synthetic --train 20 --test 5
>>> ratervar train --dataset synthetic/train --out run --epochs 5
>>> ratervar predict --checkpoint run/model.ckpt --dataset synthetic/test --out pred
>>> ratervar eval --pred pred --ref synthetic/test --out eval.csv
"""
__version__ = "0.1.0"
