# Experiment Layer
