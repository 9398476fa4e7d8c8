"""flowadv: constrained black-box evasion attacks on flow-based NIDS models,
and an ensemble adversarial detector to filter them out.

The package is organized around six pieces:

* :mod:`flowadv.schema`      -- flow-feature model, manipulability groups,
  dependency rules, and the projection that keeps perturbed flows realizable;
* :mod:`flowadv.data`        -- CSV ingestion, attacker/defender partitioning,
  min-max scaling, and a deterministic synthetic flow generator;
* :mod:`flowadv.models`      -- MLP, random forest, and k-NN classifiers with
  the attacker/defender presets, plus evaluation metrics;
* :mod:`flowadv.attack`      -- sniffed traffic statistics, the 15-mask
  escalation ladder, and the crafting loop;
* :mod:`flowadv.defense`     -- group-wise sub-detectors with discounted
  Bayesian-style fusion, the protected pipeline, and the
  adversarial-training-detection baseline;
* :mod:`flowadv.experiments` -- plan-driven end-to-end studies with
  deterministic seeds, reports, and a self-audit pass (CLI in
  :mod:`flowadv.cli`).
"""

__version__ = "0.1.0"
