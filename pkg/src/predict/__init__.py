# Prediction Layer
