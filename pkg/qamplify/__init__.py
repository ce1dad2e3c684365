'''
Hybrid quantum-classical backorder classifier with its preprocessing, metrics and explainers.
'''
__version__ = '1.0.0'
