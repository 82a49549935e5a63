# Controllers package for the command-line surface.
