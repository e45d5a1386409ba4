"""Novel class discovery on a neural embedding field."""
