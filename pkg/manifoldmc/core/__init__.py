# Settings package for the manifoldmc project
