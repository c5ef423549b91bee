# Module init