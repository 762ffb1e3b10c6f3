# Selection core: model, optimizer, matching, baselines, metrics
